#pragma once

// Dataset resolution, fully-resolved run configurations, per-seed runs and the
// ablation grid behind the command-line tool.

#include "modurec/checkpoint.hpp"
#include "modurec/training.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace modurec {

inline constexpr std::string_view kVersion = "0.1.0";

enum class DatasetId { ML100K, ML1M };

inline std::string_view to_string(DatasetId d) { return d == DatasetId::ML100K ? "ml-100k" : "ml-1m"; }

inline DatasetId parse_dataset(std::string_view s) {
    if (s == "ml-100k") return DatasetId::ML100K;
    if (s == "ml-1m") return DatasetId::ML1M;
    if (s == "ml-10m") throw ConfigError("dataset ml-10m is out of scope (supported: ml-100k, ml-1m)");
    throw ConfigError("unknown dataset '" + std::string(s) + "' (supported: ml-100k, ml-1m)");
}

enum class Precision { Float, Double };

inline std::string_view to_string(Precision p) { return p == Precision::Float ? "float" : "double"; }

inline Precision parse_precision(std::string_view s) {
    if (s == "float") return Precision::Float;
    if (s == "double") return Precision::Double;
    throw ConfigError("unknown precision '" + std::string(s) + "'");
}

struct DataConfig {
    DatasetId dataset = DatasetId::ML100K;
    std::string data_dir;
    std::string split = "provided:1";  // provided:K (ML-100K u<K>.base/test) or random
    double test_fraction = 0.1;
    double holdout_fraction = 0.1;

    /// Fold number of a provided split, 0 for a random split.
    int fold() const {
        if (split == "random") return 0;
        if (split.starts_with("provided:")) {
            const auto k = split.substr(9);
            int fold = 0;
            const auto res = std::from_chars(k.data(), k.data() + k.size(), fold);
            if (res.ec == std::errc() && res.ptr == k.data() + k.size() && fold >= 1 && fold <= 5) return fold;
        }
        throw ConfigError("split must be provided:K (K in 1..5) or random, got '" + split + "'");
    }

    void validate() const {
        const int k = fold();
        if (k != 0 && dataset != DatasetId::ML100K) throw ConfigError("provided splits exist only for ml-100k");
        if (!(holdout_fraction >= 0.0 && holdout_fraction < 1.0)) {
            throw ConfigError("holdout fraction must lie in [0, 1)");
        }
        if (k == 0 && !(test_fraction > 0.0 && test_fraction < 1.0)) {
            throw ConfigError("test fraction must lie in (0, 1)");
        }
    }
};

/// Everything needed to re-run an experiment; no defaults are left implicit.
struct RunConfig {
    DataConfig data;
    TrainConfig train;  // train.seed is replaced by each entry of `seeds`
    std::vector<std::uint64_t> seeds{1};
    double quantile = 0.25;
    Precision precision = Precision::Float;

    void validate() const {
        data.validate();
        train.validate();
        if (seeds.empty()) throw ConfigError("at least one seed is required");
        if (!(quantile > 0.0 && quantile < 0.5)) throw ConfigError("quantile must lie in (0, 0.5)");
    }
};

/// Settings of the table reproductions: ML-100K split 1, ten seeds, item
/// rows, and the learning rate and weight decay picked on the holdout set.
inline RunConfig reproduction_defaults() {
    RunConfig r;
    r.data.data_dir = "data/ml-100k";
    r.train.model.orientation = Orientation::Transposed;
    r.train.learning_rate = 3e-3;
    r.train.weight_decay = 1e-3;
    r.seeds = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    return r;
}

inline nlohmann::json to_json(const DataConfig& d) {
    return {{"dataset", to_string(d.dataset)},
            {"data_dir", d.data_dir},
            {"split", d.split},
            {"test_fraction", d.test_fraction},
            {"holdout_fraction", d.holdout_fraction}};
}

inline DataConfig data_config_from_json(const nlohmann::json& j) {
    DataConfig d;
    d.dataset = parse_dataset(j.at("dataset").get<std::string>());
    d.data_dir = j.at("data_dir").get<std::string>();
    d.split = j.at("split").get<std::string>();
    d.test_fraction = j.at("test_fraction").get<double>();
    d.holdout_fraction = j.at("holdout_fraction").get<double>();
    return d;
}

inline nlohmann::json to_json(const TrainConfig& t) {
    return {{"model", to_json(t.model)},
            {"epochs", t.epochs},
            {"learning_rate", t.learning_rate},
            {"optimizer", to_string(t.optimizer)},
            {"weight_decay", t.weight_decay},
            {"batch_rows", t.batch_rows},
            {"patience", t.patience},
            {"adam_beta1", t.adam_beta1},
            {"adam_beta2", t.adam_beta2},
            {"adam_epsilon", t.adam_epsilon}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
    TrainConfig t;
    t.model = model_config_from_json(j.at("model"));
    t.epochs = j.at("epochs").get<int>();
    t.learning_rate = j.at("learning_rate").get<double>();
    t.optimizer = parse_optimizer(j.at("optimizer").get<std::string>());
    t.weight_decay = j.at("weight_decay").get<double>();
    t.batch_rows = j.at("batch_rows").get<int>();
    t.patience = j.at("patience").get<int>();
    t.adam_beta1 = j.at("adam_beta1").get<double>();
    t.adam_beta2 = j.at("adam_beta2").get<double>();
    t.adam_epsilon = j.at("adam_epsilon").get<double>();
    return t;
}

inline nlohmann::json to_json(const RunConfig& r) {
    return {{"data", to_json(r.data)},
            {"train", to_json(r.train)},
            {"seeds", r.seeds},
            {"quantile", r.quantile},
            {"precision", to_string(r.precision)}};
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig r;
    r.data = data_config_from_json(j.at("data"));
    r.train = train_config_from_json(j.at("train"));
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    r.quantile = j.at("quantile").get<double>();
    r.precision = parse_precision(j.at("precision").get<std::string>());
    return r;
}

// ---------------------------------------------------------------------------
// Data

/// 64-bit FNV-1a over the bytes of every file, in order, rendered as hex.
inline std::string files_checksum(const std::vector<std::string>& paths) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    for (const auto& p : paths) {
        std::ifstream in(p, std::ios::binary);
        if (!in) throw Error("cannot open " + p);
        while (in) {
            in.read(buf, sizeof buf);
            for (std::streamsize k = 0; k < in.gcount(); ++k) {
                h ^= static_cast<unsigned char>(buf[k]);
                h *= 0x100000001b3ULL;
            }
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return std::string("fnv1a64:") + hex;
}

struct LoadedData {
    DataConfig config;
    RatingDataset full;
    FeatureMatrices features;
    std::vector<std::string> files;
    std::string checksum;
};

/// Files a dataset configuration reads, in checksum order.
inline std::vector<std::string> dataset_files(const DataConfig& d) {
    const std::filesystem::path dir(d.data_dir);
    if (d.dataset == DatasetId::ML100K) {
        std::vector<std::string> out{(dir / "u.data").string(), (dir / "u.user").string(), (dir / "u.item").string()};
        if (const int k = d.fold(); k != 0) {
            out.push_back((dir / ("u" + std::to_string(k) + ".base")).string());
            out.push_back((dir / ("u" + std::to_string(k) + ".test")).string());
        }
        return out;
    }
    return {(dir / "ratings.dat").string(), (dir / "users.dat").string(), (dir / "movies.dat").string()};
}

inline LoadedData load_data(const DataConfig& cfg) {
    cfg.validate();
    LoadedData out;
    out.config = cfg;
    out.files = dataset_files(cfg);
    for (const auto& f : out.files) {
        if (!std::filesystem::exists(f)) {
            throw Error("missing dataset file " + f + " (expected the stock " + std::string(to_string(cfg.dataset)) +
                        " layout under --data-dir)");
        }
    }
    if (cfg.dataset == DatasetId::ML100K) {
        std::tie(out.full, out.features) = parse_ml100k(out.files[0], out.files[1], out.files[2]);
    } else {
        std::tie(out.full, out.features) = parse_ml1m(out.files[0], out.files[1], out.files[2]);
    }
    out.checksum = files_checksum(out.files);
    return out;
}

/// The split for one seed: the seed draws the holdout (and, for random
/// splits, the test set).
inline SplitBundle make_split(const LoadedData& data, std::uint64_t seed) {
    const auto& c = data.config;
    if (const int k = c.fold(); k != 0) {
        return load_ml100k_split(data.files[3], data.files[4], c.holdout_fraction, seed, &data.full);
    }
    return random_split(data.full, c.test_fraction, c.holdout_fraction, seed);
}

// ---------------------------------------------------------------------------
// Runs

struct SeedResult {
    std::uint64_t seed = 0;
    int best_epoch = 0;
    int epochs_run = 0;
    double best_holdout_rmse = std::nan("");
    double seconds = 0.0;
    EvalReport eval;
    FilmParams<double> film;
    CombinerParams<double> combiner;
    std::vector<EpochRecord> epochs;
};

/// Metric record of a finished run. Wall-clock time is kept out so records of
/// replayed runs compare equal.
inline nlohmann::json summary_json(const SeedResult& r) {
    auto num = [](double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); };
    return {{"seed", r.seed},
            {"best_epoch", r.best_epoch},
            {"epochs_run", r.epochs_run},
            {"best_holdout_rmse", num(r.best_holdout_rmse)},
            {"test_rmse", num(r.eval.overall_rmse)},
            {"few_ratings_rmse", num(r.eval.few_ratings_rmse)},
            {"many_ratings_rmse", num(r.eval.many_ratings_rmse)},
            {"test_size", r.eval.test_size},
            {"few_size", r.eval.few_size},
            {"many_size", r.eval.many_size},
            {"few_fraction", r.eval.few_fraction},
            {"many_fraction", r.eval.many_fraction},
            {"quantile", r.eval.quantile},
            {"variant", r.eval.variant},
            {"combiner", r.eval.combiner},
            {"film", {r.film.alpha, r.film.beta, r.film.gamma}},
            {"combiner_params", {r.combiner.w1, r.combiner.w2, r.combiner.b, r.combiner.alpha_static}}};
}

inline nlohmann::json epoch_json(std::uint64_t seed, const EpochRecord& e) {
    return {{"type", "epoch"},
            {"seed", seed},
            {"epoch", e.epoch},
            {"train_loss", e.train_loss},
            {"holdout_rmse", std::isnan(e.holdout_rmse) ? nlohmann::json(nullptr) : nlohmann::json(e.holdout_rmse)},
            {"seconds", e.seconds}};
}

template <typename Scalar>
struct SeedRun {
    SeedResult result;
    Checkpoint<Scalar> checkpoint;
};

template <typename Scalar>
SeedRun<Scalar> run_seed(const LoadedData& data, const RunConfig& cfg, std::uint64_t seed,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    const auto split = make_split(data, seed);
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    auto report = train<Scalar>(split, data.features, tc, on_epoch);

    const auto td = TrainingData<Scalar>::build(split, data.features);
    const Modurec<Scalar> model(tc.model, td);
    SeedRun<Scalar> out;
    auto& r = out.result;
    r.seed = seed;
    r.best_epoch = report.best_epoch;
    r.epochs_run = static_cast<int>(report.epochs.size());
    r.best_holdout_rmse = report.best_holdout_rmse;
    r.seconds = report.seconds;
    r.eval = evaluate(model.predict(report.params), split, cfg.quantile);
    r.eval.variant = std::string(to_string(tc.model.variant));
    r.eval.combiner = std::string(to_string(tc.model.effective_combiner()));
    r.film = {static_cast<double>(report.params.film.alpha), static_cast<double>(report.params.film.beta),
              static_cast<double>(report.params.film.gamma)};
    r.combiner = {static_cast<double>(report.params.combiner.w1), static_cast<double>(report.params.combiner.w2),
                  static_cast<double>(report.params.combiner.b),
                  static_cast<double>(report.params.combiner.alpha_static)};
    r.epochs = std::move(report.epochs);

    auto& ck = out.checkpoint;
    ck.config = tc.model;
    ck.shape = {split.train.num_users(), split.train.num_items(), data.features.user.cols(),
                data.features.item.cols()};
    ck.params = std::move(report.params);
    ck.extra = {{"seed", seed},
                {"data", to_json(data.config)},
                {"dataset_checksum", data.checksum},
                {"precision", to_string(cfg.precision)},
                {"quantile", cfg.quantile}};
    return out;
}

/// run_seed in the precision requested by the configuration; the checkpoint
/// is written to `checkpoint_path` when non-empty.
inline SeedResult run_seed_any(const LoadedData& data, const RunConfig& cfg, std::uint64_t seed,
                               const std::string& checkpoint_path = {},
                               const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    auto go = [&](auto tag) {
        using S = decltype(tag);
        auto run = run_seed<S>(data, cfg, seed, on_epoch);
        if (!checkpoint_path.empty()) save_checkpoint(checkpoint_path, run.checkpoint);
        return std::move(run.result);
    };
    return cfg.precision == Precision::Float ? go(float{}) : go(double{});
}

// ---------------------------------------------------------------------------
// Ablation grid

struct GridCell {
    std::string label;
    ModelConfig model;
};

struct CellRun {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    SeedResult result;
};

struct Stat {
    double mean = std::nan("");
    double std = std::nan("");  // sample standard deviation; 0 for a single value
    std::size_t n = 0;
};

inline Stat mean_std(const std::vector<double>& v) {
    Stat s;
    std::vector<double> x;
    for (double d : v) {
        if (!std::isnan(d)) x.push_back(d);
    }
    s.n = x.size();
    if (x.empty()) return s;
    double sum = 0.0;
    for (double d : x) sum += d;
    s.mean = sum / static_cast<double>(x.size());
    double ss = 0.0;
    for (double d : x) ss += (d - s.mean) * (d - s.mean);
    s.std = x.size() > 1 ? std::sqrt(ss / static_cast<double>(x.size() - 1)) : 0.0;
    return s;
}

struct CellSummary {
    GridCell cell;
    std::vector<CellRun> runs;

    bool complete() const {
        for (const auto& r : runs) {
            if (!r.ok) return false;
        }
        return !runs.empty();
    }

    template <typename Fn>
    Stat stat(Fn field) const {
        std::vector<double> v;
        for (const auto& r : runs) {
            if (r.ok) v.push_back(field(r.result));
        }
        return mean_std(v);
    }

    Stat test_rmse() const { return stat([](const SeedResult& r) { return r.eval.overall_rmse; }); }
    Stat few_rmse() const { return stat([](const SeedResult& r) { return r.eval.few_ratings_rmse; }); }
    Stat many_rmse() const { return stat([](const SeedResult& r) { return r.eval.many_ratings_rmse; }); }
    Stat alpha_static() const { return stat([](const SeedResult& r) { return r.combiner.alpha_static; }); }
};

/// Trains every cell for every seed. A failing run is recorded on its cell and
/// the grid carries on.
inline std::vector<CellSummary> run_ablation_grid(
    const LoadedData& data, const RunConfig& base, const std::vector<GridCell>& cells,
    const std::function<void(const GridCell&, const CellRun&)>& on_run = {}) {
    std::vector<CellSummary> out;
    for (const auto& cell : cells) {
        CellSummary summary{cell, {}};
        RunConfig cfg = base;
        cfg.train.model = cell.model;
        for (auto seed : base.seeds) {
            CellRun run;
            run.seed = seed;
            try {
                run.result = run_seed_any(data, cfg, seed);
                run.ok = true;
            } catch (const std::exception& e) {
                run.error = e.what();
            }
            if (on_run) on_run(cell, run);
            summary.runs.push_back(std::move(run));
        }
        out.push_back(std::move(summary));
    }
    return out;
}

enum class TableId { Table2, Table3, Table4 };

inline std::string_view to_string(TableId t) {
    switch (t) {
        case TableId::Table2: return "table2";
        case TableId::Table3: return "table3";
        case TableId::Table4: return "table4";
    }
    return "?";
}

inline TableId parse_table(std::string_view s) {
    if (s == "table2") return TableId::Table2;
    if (s == "table3") return TableId::Table3;
    if (s == "table4") return TableId::Table4;
    throw ConfigError("unknown table '" + std::string(s) + "' (expected table2, table3 or table4)");
}

/// Grid cells of a table, derived from `base` (dropout rates, latent size,
/// orientation and cold rule carry over).
inline std::vector<GridCell> table_cells(TableId t, const ModelConfig& base) {
    auto with = [&](Variant v, CombinerMode m) {
        ModelConfig c = base;
        c.variant = v;
        c.combiner = m;
        return c;
    };
    switch (t) {
        case TableId::Table2:
            return {{"Autorec (base)", with(Variant::Base, CombinerMode::Nothing)},
                    {"Modurec D", with(Variant::D, CombinerMode::Nothing)},
                    {"Modurec DT", with(Variant::DT, CombinerMode::Nothing)},
                    {"Modurec DFT", with(Variant::DFT, CombinerMode::Adaptive)}};
        case TableId::Table3:
            return {{"without time", with(Variant::D, CombinerMode::Nothing)},
                    {"with time", with(Variant::DT, CombinerMode::Nothing)}};
        case TableId::Table4:
            return {{"Nothing", with(Variant::DFT, CombinerMode::Nothing)},
                    {"Static", with(Variant::DFT, CombinerMode::Static)},
                    {"Adaptive", with(Variant::DFT, CombinerMode::Adaptive)}};
    }
    return {};
}

inline std::string format_stat(const Stat& s) {
    if (s.n == 0) return "n/a";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f +/- %.4f", s.mean, s.std);
    return buf;
}

/// Human-readable table.
inline std::string format_table(TableId t, DatasetId dataset, const std::vector<CellSummary>& cells,
                                std::size_t seed_count) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%s on %s, %zu seed(s), test RMSE mean +/- std\n",
                  std::string(to_string(t)).c_str(), std::string(to_string(dataset)).c_str(), seed_count);
    out += line;
    if (seed_count < 2) out += "LOW CONFIDENCE: single seed, no spread estimate\n";
    if (t == TableId::Table4) {
        std::snprintf(line, sizeof line, "%-16s %-22s %-22s %-22s %s\n", "combiner", "few ratings", "many ratings",
                      "overall", "alpha_static");
        out += line;
        for (const auto& c : cells) {
            const bool is_static = c.cell.model.combiner == CombinerMode::Static;
            std::snprintf(line, sizeof line, "%-16s %-22s %-22s %-22s %s\n", c.cell.label.c_str(),
                          format_stat(c.few_rmse()).c_str(), format_stat(c.many_rmse()).c_str(),
                          format_stat(c.test_rmse()).c_str(),
                          is_static ? format_stat(c.alpha_static()).c_str() : "-");
            out += line;
        }
    } else {
        std::snprintf(line, sizeof line, "%-16s %s\n", "model", "test RMSE");
        out += line;
        for (const auto& c : cells) {
            std::snprintf(line, sizeof line, "%-16s %s\n", c.cell.label.c_str(), format_stat(c.test_rmse()).c_str());
            out += line;
        }
    }
    for (const auto& c : cells) {
        for (const auto& r : c.runs) {
            if (!r.ok) out += "FAILED " + c.cell.label + " seed " + std::to_string(r.seed) + ": " + r.error + "\n";
        }
    }
    return out;
}

inline nlohmann::json cell_json(TableId t, const CellSummary& c) {
    auto stat = [](const Stat& s) {
        if (s.n == 0) return nlohmann::json(nullptr);
        return nlohmann::json{{"mean", s.mean}, {"std", s.std}, {"n", s.n}};
    };
    return {{"type", "cell"},
            {"table", to_string(t)},
            {"cell", c.cell.label},
            {"model", to_json(c.cell.model)},
            {"complete", c.complete()},
            {"test_rmse", stat(c.test_rmse())},
            {"few_ratings_rmse", stat(c.few_rmse())},
            {"many_ratings_rmse", stat(c.many_rmse())},
            {"alpha_static", stat(c.alpha_static())}};
}

// ---------------------------------------------------------------------------
// Manifest

struct RunManifest {
    std::string command;  // "train" or "reproduce"
    std::string table;    // reproduce only
    RunConfig config;
    std::string dataset_checksum;
    std::string out_dir;
    std::string version{kVersion};
};

inline nlohmann::json to_json(const RunManifest& m) {
    return {{"artifact", "modurec " + m.version},
            {"command", m.command},
            {"table", m.table},
            {"config", to_json(m.config)},
            {"seeds", m.config.seeds},
            {"dataset_checksum", m.dataset_checksum},
            {"out_dir", m.out_dir}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.table = j.value("table", std::string());
    m.config = run_config_from_json(j.at("config"));
    m.dataset_checksum = j.at("dataset_checksum").get<std::string>();
    m.out_dir = j.at("out_dir").get<std::string>();
    const auto artifact = j.at("artifact").get<std::string>();
    m.version = artifact.starts_with("modurec ") ? artifact.substr(8) : artifact;
    return m;
}

inline RunManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open manifest " + path);
    return manifest_from_json(nlohmann::json::parse(in));
}

}  // namespace modurec
