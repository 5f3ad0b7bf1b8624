// modurec: train, evaluate and reproduce the ablation tables from the command line.
//
//   modurec train --dataset ml-100k --split provided:1 --variant dt --seed 7 --out runs/dt
//   modurec eval --checkpoint runs/dt/model-seed7.ckpt
//   modurec reproduce table3 --dataset ml-100k --out runs/table3
//   modurec replay --manifest runs/table3/manifest.json

#include "modurec/modurec.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace modurec;

namespace {

/// Raw flag values; resolved into a RunConfig once parsing is done.
struct Flags {
    std::string dataset = "ml-100k";
    std::string data_dir;
    std::string split = "provided:1";
    double test_fraction = 0.1;
    double holdout_fraction = 0.1;
    std::string variant = "dft";
    std::string combiner = "adaptive";
    std::string orientation = "as-written";
    std::string cold_rule = "either-zero";
    int latent_dim = 500;
    std::vector<int> time_hidden{3, 32};
    double lr = 1e-3;
    std::string optimizer = "adam";
    double weight_decay = 5e-5;
    double dropout_input = 0.3;
    double dropout_embedding = 0.1;
    int epochs = 300;
    int patience = 15;
    int batch_rows = 0;
    std::uint64_t seed = 1;
    std::string seeds;
    double quantile = 0.25;
    std::string precision = "float";
    std::string out;
};

/// Settings used by `reproduce` unless overridden on the command line. They
/// are the holdout-tuned values documented in the README.
Flags reproduction_flags() {
    const auto r = reproduction_defaults();
    Flags f;
    f.orientation = std::string(to_string(r.train.model.orientation));
    f.lr = r.train.learning_rate;
    f.weight_decay = r.train.weight_decay;
    f.seeds = std::to_string(r.seeds.front()) + "-" + std::to_string(r.seeds.back());
    return f;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string tok;
    auto number = [&](const std::string& s) {
        std::uint64_t v = 0;
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("bad seed '" + s + "'");
        return v;
    };
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        if (const auto dash = tok.find('-'); dash != std::string::npos) {
            const auto lo = number(tok.substr(0, dash));
            const auto hi = number(tok.substr(dash + 1));
            if (hi < lo) throw ConfigError("bad seed range '" + tok + "'");
            for (auto s = lo; s <= hi; ++s) out.push_back(s);
        } else {
            out.push_back(number(tok));
        }
    }
    if (out.empty()) throw ConfigError("empty seed list");
    return out;
}

void add_data_flags(CLI::App* app, Flags& f) {
    app->add_option("--dataset", f.dataset, "ml-100k or ml-1m")->capture_default_str();
    app->add_option("--data-dir", f.data_dir, "directory holding the stock dataset files (default data/<dataset>)");
    app->add_option("--split", f.split, "provided:K (ML-100K u<K>.base/u<K>.test) or random")->capture_default_str();
    app->add_option("--test-fraction", f.test_fraction, "test share of a random split")->capture_default_str();
    app->add_option("--holdout-fraction", f.holdout_fraction, "share of the training part held out")
        ->capture_default_str();
    app->add_option("--quantile", f.quantile, "few/many ratings quantile")->capture_default_str();
}

void add_model_flags(CLI::App* app, Flags& f) {
    app->add_option("--variant", f.variant, "base, d, dt or dft")->capture_default_str();
    app->add_option("--combiner", f.combiner, "nothing, static or adaptive")->capture_default_str();
    app->add_option("--orientation", f.orientation, "as-written (user rows) or transposed (item rows)")
        ->capture_default_str();
    app->add_option("--cold-rule", f.cold_rule, "either-zero or both-zero")->capture_default_str();
    app->add_option("--latent-dim", f.latent_dim, "autoencoder width d")->capture_default_str();
    app->add_option("--time-hidden", f.time_hidden, "TimeNN hidden widths")->capture_default_str();
    app->add_option("--lr", f.lr, "learning rate")->capture_default_str();
    app->add_option("--optimizer", f.optimizer, "adam or sgd")->capture_default_str();
    app->add_option("--weight-decay", f.weight_decay, "L2 strength on the autoencoder weights")->capture_default_str();
    app->add_option("--dropout-input", f.dropout_input, "input dropout rate")->capture_default_str();
    app->add_option("--dropout-embedding", f.dropout_embedding, "embedding dropout rate")->capture_default_str();
    app->add_option("--epochs", f.epochs, "maximum epochs")->capture_default_str();
    app->add_option("--patience", f.patience, "early-stopping patience in epochs")->capture_default_str();
    app->add_option("--batch-rows", f.batch_rows, "autoencoder rows per step, 0 = full batch")->capture_default_str();
    app->add_option("--precision", f.precision, "float or double")->capture_default_str();
}

void add_seed_flags(CLI::App* app, Flags& f) {
    auto* one = app->add_option("--seed", f.seed, "single seed")->capture_default_str();
    app->add_option("--seeds", f.seeds, "seed list, e.g. 1,2,3 or 1-10")->excludes(one);
}

RunConfig resolve(const Flags& f) {
    RunConfig r;
    r.data.dataset = parse_dataset(f.dataset);
    r.data.data_dir = f.data_dir.empty() ? ("data/" + std::string(to_string(r.data.dataset))) : f.data_dir;
    r.data.split = f.split;
    r.data.test_fraction = f.test_fraction;
    r.data.holdout_fraction = f.holdout_fraction;
    if (r.data.dataset == DatasetId::ML1M && f.split.starts_with("provided:")) r.data.split = "random";

    auto& m = r.train.model;
    m.variant = parse_variant(f.variant);
    m.combiner = parse_combiner_mode(f.combiner);
    m.orientation = parse_orientation(f.orientation);
    m.cold_rule = parse_cold_rule(f.cold_rule);
    m.latent_dim = f.latent_dim;
    m.time_hidden = f.time_hidden;
    m.dropout_input = f.dropout_input;
    m.dropout_embedding = f.dropout_embedding;
    r.train.epochs = f.epochs;
    r.train.learning_rate = f.lr;
    r.train.optimizer = parse_optimizer(f.optimizer);
    r.train.weight_decay = f.weight_decay;
    r.train.batch_rows = f.batch_rows;
    r.train.patience = f.patience;
    r.seeds = f.seeds.empty() ? std::vector<std::uint64_t>{f.seed} : parse_seed_list(f.seeds);
    r.quantile = f.quantile;
    r.precision = parse_precision(f.precision);
    r.validate();
    return r;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
}

void write_manifest(const RunManifest& m) {
    write_text(fs::path(m.out_dir) / "manifest.json", to_json(m).dump(2) + "\n");
}

std::string describe(const SeedResult& r) {
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "seed %llu: test RMSE %.4f | few %.4f (%zu, %.2f%%) | many %.4f (%zu, %.2f%%) | best epoch %d, "
                  "holdout %.4f\n",
                  static_cast<unsigned long long>(r.seed), r.eval.overall_rmse, r.eval.few_ratings_rmse,
                  r.eval.few_size, 100.0 * r.eval.few_fraction, r.eval.many_ratings_rmse, r.eval.many_size,
                  100.0 * r.eval.many_fraction, r.best_epoch, r.best_holdout_rmse);
    return buf;
}

// ---------------------------------------------------------------------------

int run_train(const RunConfig& cfg, const std::string& out_dir, bool verbose) {
    fs::create_directories(out_dir);
    const auto data = load_data(cfg.data);
    RunManifest manifest{"train", "", cfg, data.checksum, out_dir};
    write_manifest(manifest);

    std::ofstream metrics(fs::path(out_dir) / "metrics.jsonl");
    std::string text;
    for (auto seed : cfg.seeds) {
        const auto ckpt = (fs::path(out_dir) / ("model-seed" + std::to_string(seed) + ".ckpt")).string();
        const auto result = run_seed_any(data, cfg, seed, ckpt, [&](const EpochRecord& e) {
            metrics << epoch_json(seed, e).dump() << '\n';
            if (verbose && (e.epoch == 1 || e.epoch % 10 == 0)) {
                std::cerr << "seed " << seed << " epoch " << e.epoch << " loss " << e.train_loss << " holdout "
                          << e.holdout_rmse << '\n';
            }
        });
        auto summary = summary_json(result);
        summary["type"] = "summary";
        summary["seconds"] = result.seconds;
        metrics << summary.dump() << '\n';
        metrics.flush();
        text += describe(result);
        std::cout << describe(result) << std::flush;
    }
    write_text(fs::path(out_dir) / "metrics.txt", text);
    return 0;
}

template <typename Scalar>
EvalReport eval_checkpoint(const Checkpoint<Scalar>& ck, const SplitBundle& split, const FeatureMatrices& features,
                           double quantile) {
    check_compatible(ck, split, features);
    const auto td = TrainingData<Scalar>::build(split, features);
    const Modurec<Scalar> model(ck.config, td);
    auto r = evaluate(model.predict(ck.params), split, quantile);
    r.variant = std::string(to_string(ck.config.variant));
    r.combiner = std::string(to_string(ck.config.effective_combiner()));
    return r;
}

int run_eval(const std::string& checkpoint, CLI::App* app, const Flags& f) {
    // Data settings default to the ones recorded in the checkpoint.
    std::ifstream probe(checkpoint);
    if (!probe) throw Error("cannot open checkpoint " + checkpoint);
    const auto meta_ck = read_checkpoint<double>(probe, checkpoint);
    const auto& extra = meta_ck.extra;
    DataConfig dc = extra.contains("data") ? data_config_from_json(extra.at("data")) : DataConfig{};
    if (app->count("--dataset") || !extra.contains("data")) {
        dc.dataset = parse_dataset(f.dataset);
        if (!app->count("--data-dir")) dc.data_dir = "data/" + std::string(to_string(dc.dataset));
        if (dc.dataset == DatasetId::ML1M && !app->count("--split")) dc.split = "random";
    }
    if (app->count("--data-dir")) dc.data_dir = f.data_dir;
    if (app->count("--split")) dc.split = f.split;
    if (app->count("--test-fraction")) dc.test_fraction = f.test_fraction;
    if (app->count("--holdout-fraction")) dc.holdout_fraction = f.holdout_fraction;
    const std::uint64_t seed = app->count("--seed") ? f.seed : extra.value("seed", std::uint64_t{1});
    const double quantile = app->count("--quantile") ? f.quantile : extra.value("quantile", 0.25);
    const auto precision = parse_precision(extra.value("precision", std::string("double")));

    const auto data = load_data(dc);
    const auto split = make_split(data, seed);
    const auto report = precision == Precision::Float
                            ? eval_checkpoint(load_checkpoint<float>(checkpoint), split, data.features, quantile)
                            : eval_checkpoint(meta_ck, split, data.features, quantile);

    const json j = {{"checkpoint", checkpoint},
                    {"variant", report.variant},
                    {"combiner", report.combiner},
                    {"overall_rmse", report.overall_rmse},
                    {"few_ratings_rmse", std::isnan(report.few_ratings_rmse) ? json(nullptr) : json(report.few_ratings_rmse)},
                    {"many_ratings_rmse", std::isnan(report.many_ratings_rmse) ? json(nullptr) : json(report.many_ratings_rmse)},
                    {"test_size", report.test_size},
                    {"few_size", report.few_size},
                    {"many_size", report.many_size},
                    {"few_fraction", report.few_fraction},
                    {"many_fraction", report.many_fraction},
                    {"quantile", report.quantile}};
    char buf[512];
    std::snprintf(buf, sizeof buf,
                  "overall RMSE      %.4f (%zu ratings)\nfew ratings RMSE  %.4f (%zu ratings, %.2f%%)\n"
                  "many ratings RMSE %.4f (%zu ratings, %.2f%%)\n",
                  report.overall_rmse, report.test_size, report.few_ratings_rmse, report.few_size,
                  100.0 * report.few_fraction, report.many_ratings_rmse, report.many_size,
                  100.0 * report.many_fraction);
    std::cout << buf;
    if (!f.out.empty()) {
        fs::create_directories(f.out);
        write_text(fs::path(f.out) / "eval.json", j.dump(2) + "\n");
        write_text(fs::path(f.out) / "eval.txt", buf);
    }
    return 0;
}

int run_reproduce(TableId table, const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const auto data = load_data(cfg.data);
    RunManifest manifest{"reproduce", std::string(to_string(table)), cfg, data.checksum, out_dir};
    write_manifest(manifest);

    const auto id = std::string(to_string(table));
    std::ofstream records(fs::path(out_dir) / (id + ".jsonl"));
    const auto cells = run_ablation_grid(data, cfg, table_cells(table, cfg.train.model),
                                         [&](const GridCell& cell, const CellRun& run) {
                                             json rec = {{"type", "run"}, {"table", id}, {"cell", cell.label},
                                                         {"seed", run.seed}, {"ok", run.ok}};
                                             if (run.ok) {
                                                 rec["metrics"] = summary_json(run.result);
                                                 std::cout << cell.label << ", " << describe(run.result);
                                             } else {
                                                 rec["error"] = run.error;
                                                 std::cout << cell.label << ", seed " << run.seed
                                                           << " FAILED: " << run.error << '\n';
                                             }
                                             records << rec.dump() << '\n';
                                             records.flush();
                                         });
    bool complete = true;
    for (const auto& c : cells) {
        records << cell_json(table, c).dump() << '\n';
        complete = complete && c.complete();
    }
    const auto text = format_table(table, cfg.data.dataset, cells, cfg.seeds.size());
    write_text(fs::path(out_dir) / (id + ".txt"), text);
    std::cout << '\n' << text;
    return complete ? 0 : 1;
}

/// Metric records of a finished run directory, in file order.
std::vector<json> recorded_metrics(const RunManifest& m, const std::string& dir) {
    const auto file = m.command == "train" ? fs::path(dir) / "metrics.jsonl" : fs::path(dir) / (m.table + ".jsonl");
    std::vector<json> out;
    std::ifstream in(file);
    if (!in) return out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        const auto type = j.value("type", std::string());
        if (type == "summary") {
            j.erase("seconds");
            out.push_back(std::move(j));
        } else if (type == "run" || type == "cell") {
            out.push_back(std::move(j));
        } else if (type == "epoch") {
            j.erase("seconds");
            out.push_back(std::move(j));
        }
    }
    return out;
}

int run_replay(const std::string& manifest_path, std::string out_dir) {
    const auto m = load_manifest(manifest_path);
    if (out_dir.empty()) out_dir = m.out_dir + "-replay";
    if (fs::weakly_canonical(out_dir) == fs::weakly_canonical(m.out_dir)) {
        throw ConfigError("replay output directory must differ from the original run");
    }
    const auto data_check = load_data(m.config.data).checksum;
    if (data_check != m.dataset_checksum) {
        throw Error("dataset checksum " + data_check + " differs from the manifest's " + m.dataset_checksum);
    }
    int code = 0;
    if (m.command == "train") {
        code = run_train(m.config, out_dir, false);
    } else if (m.command == "reproduce") {
        code = run_reproduce(parse_table(m.table), m.config, out_dir);
    } else {
        throw ConfigError("manifest has unknown command '" + m.command + "'");
    }

    const auto before = recorded_metrics(m, m.out_dir);
    const auto after = recorded_metrics(m, out_dir);
    if (before.empty()) {
        std::cout << "replay: no recorded metrics in " << m.out_dir << " to compare against\n";
        return code;
    }
    std::size_t mismatches = 0;
    for (std::size_t k = 0; k < std::max(before.size(), after.size()); ++k) {
        if (k >= before.size() || k >= after.size() || before[k] != after[k]) ++mismatches;
    }
    if (mismatches == 0) {
        std::cout << "replay: all " << before.size() << " metric records identical\n";
        return code;
    }
    std::cout << "replay: " << mismatches << " of " << before.size() << " metric records differ\n";
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Modurec: time- and feature-modulated autoencoder recommender"};
    app.set_version_flag("--version", std::string("modurec ") + std::string(kVersion));
    app.require_subcommand(1);

    Flags train_flags;
    train_flags.out = "runs/train";
    bool verbose = false;
    auto* train = app.add_subcommand("train", "train a model and write metrics, checkpoints and a manifest");
    add_data_flags(train, train_flags);
    add_model_flags(train, train_flags);
    add_seed_flags(train, train_flags);
    train->add_option("--out", train_flags.out, "output directory")->capture_default_str();
    train->add_flag("-v,--verbose", verbose, "print progress every 10 epochs");

    Flags eval_flags;
    std::string checkpoint;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
    eval->add_option("--checkpoint", checkpoint, "checkpoint written by train")->required();
    add_data_flags(eval, eval_flags);
    eval->add_option("--seed", eval_flags.seed, "split seed (default: the checkpoint's)");
    eval->add_option("--out", eval_flags.out, "also write eval.json / eval.txt here");

    Flags repro_flags = reproduction_flags();
    std::string table_name;
    auto* repro = app.add_subcommand("reproduce", "run an ablation table (table2, table3 or table4)");
    repro->add_option("table", table_name, "table2, table3 or table4")->required();
    add_data_flags(repro, repro_flags);
    add_model_flags(repro, repro_flags);
    add_seed_flags(repro, repro_flags);
    repro->add_option("--out", repro_flags.out, "output directory (default runs/<table>)");

    std::string manifest_path, replay_out;
    auto* replay = app.add_subcommand("replay", "re-run a manifest and compare its metrics with the original run");
    replay->add_option("--manifest", manifest_path, "manifest.json of a previous run")->required();
    replay->add_option("--out", replay_out, "output directory (default <original>-replay)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*train) return run_train(resolve(train_flags), train_flags.out, verbose);
        if (*eval) return run_eval(checkpoint, eval, eval_flags);
        if (*repro) {
            const auto table = parse_table(table_name);
            if (repro->count("--seed")) repro_flags.seeds.clear();
            const auto cfg = resolve(repro_flags);
            const auto out = repro_flags.out.empty() ? "runs/" + table_name : repro_flags.out;
            return run_reproduce(table, cfg, out);
        }
        if (*replay) return run_replay(manifest_path, replay_out);
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
