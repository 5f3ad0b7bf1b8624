#pragma once

// Text checkpoint container. Layout (one item per line):
//
//   modurec-checkpoint 1
//   meta <json object: config, cardinalities, free-form metadata>
//   tensor <name> <rows> <cols>
//   <rows*cols values, row-major, shortest round-trip decimal, space separated>
//   ... one tensor block per parameter tensor, in registry order ...
//   end
//
// Values round-trip exactly through std::to_chars / std::from_chars.

#include "modurec/model.hpp"

#include <nlohmann/json.hpp>

#include <charconv>
#include <fstream>
#include <sstream>

namespace modurec {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
    return {{"variant", to_string(c.variant)},
            {"combiner", to_string(c.combiner)},
            {"orientation", to_string(c.orientation)},
            {"cold_rule", to_string(c.cold_rule)},
            {"latent_dim", c.latent_dim},
            {"time_hidden", c.time_hidden},
            {"dropout_input", c.dropout_input},
            {"dropout_embedding", c.dropout_embedding}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.variant = parse_variant(j.at("variant").get<std::string>());
    c.combiner = parse_combiner_mode(j.at("combiner").get<std::string>());
    c.orientation = parse_orientation(j.at("orientation").get<std::string>());
    c.cold_rule = parse_cold_rule(j.at("cold_rule").get<std::string>());
    c.latent_dim = j.at("latent_dim").get<int>();
    c.time_hidden = j.at("time_hidden").get<std::vector<int>>();
    c.dropout_input = j.at("dropout_input").get<double>();
    c.dropout_embedding = j.at("dropout_embedding").get<double>();
    return c;
}

struct CheckpointShape {
    Eigen::Index users = 0;
    Eigen::Index items = 0;
    Eigen::Index user_features = 0;
    Eigen::Index item_features = 0;
};

template <typename Scalar>
struct Checkpoint {
    ModelConfig config;
    CheckpointShape shape;
    nlohmann::json extra = nlohmann::json::object();
    ModelParams<Scalar> params;
};

/// Parameters with every tensor sized for `cfg` and `shape`, all zero.
template <typename Scalar>
ModelParams<Scalar> shaped_params(const ModelConfig& cfg, const CheckpointShape& shape) {
    ModelParams<Scalar> p;
    const auto width = cfg.orientation == Orientation::AsWritten ? shape.items : shape.users;
    p.ae = AutoencoderParams<Scalar>::zeros(width, cfg.latent_dim);
    p.time = TimeNN<Scalar>::zeros(cfg.time_hidden);
    p.bilinear.theta = Matrix<Scalar>::Zero(shape.user_features, shape.item_features);
    return p;
}

template <typename Scalar>
void write_checkpoint(std::ostream& out, const Checkpoint<Scalar>& ck) {
    nlohmann::json meta = {{"config", to_json(ck.config)},
                           {"users", ck.shape.users},
                           {"items", ck.shape.items},
                           {"user_features", ck.shape.user_features},
                           {"item_features", ck.shape.item_features},
                           {"extra", ck.extra}};
    out << "modurec-checkpoint " << kCheckpointVersion << '\n';
    out << "meta " << meta.dump() << '\n';
    auto params = ck.params;
    char buf[64];
    for (const auto& t : tensors(params)) {
        out << "tensor " << t.name << ' ' << t.rows << ' ' << t.cols << '\n';
        for (std::size_t k = 0; k < t.data.size(); ++k) {
            const auto res = std::to_chars(buf, buf + sizeof buf, t.data[k]);
            out.write(buf, res.ptr - buf);
            out.put(k + 1 == t.data.size() ? '\n' : ' ');
        }
        if (t.data.empty()) out.put('\n');
    }
    out << "end\n";
}

template <typename Scalar>
void save_checkpoint(const std::string& path, const Checkpoint<Scalar>& ck) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    write_checkpoint(out, ck);
}

template <typename Scalar>
Checkpoint<Scalar> read_checkpoint(std::istream& in, const std::string& name = "checkpoint") {
    std::string line;
    std::size_t line_no = 0;
    auto next = [&]() -> std::string& {
        if (!std::getline(in, line)) throw ParseError(name, line_no, "unexpected end of file");
        ++line_no;
        return line;
    };
    {
        std::istringstream head(next());
        std::string magic;
        int version = 0;
        head >> magic >> version;
        if (magic != "modurec-checkpoint") throw ParseError(name, line_no, "not a modurec checkpoint");
        if (version != kCheckpointVersion) {
            throw ParseError(name, line_no, "unsupported checkpoint version " + std::to_string(version));
        }
    }
    Checkpoint<Scalar> ck;
    {
        const auto& l = next();
        if (!l.starts_with("meta ")) throw ParseError(name, line_no, "expected meta line");
        const auto meta = nlohmann::json::parse(l.substr(5));
        ck.config = model_config_from_json(meta.at("config"));
        ck.shape = {meta.at("users").template get<Eigen::Index>(), meta.at("items").template get<Eigen::Index>(),
                    meta.at("user_features").template get<Eigen::Index>(), meta.at("item_features").template get<Eigen::Index>()};
        ck.extra = meta.value("extra", nlohmann::json::object());
    }
    ck.params = shaped_params<Scalar>(ck.config, ck.shape);
    for (auto& t : tensors(ck.params)) {
        std::istringstream header(next());
        std::string tag, tname;
        Eigen::Index rows = 0, cols = 0;
        header >> tag >> tname >> rows >> cols;
        if (tag != "tensor" || tname != t.name) {
            throw ParseError(name, line_no, "expected tensor " + t.name + ", found '" + line + "'");
        }
        if (rows != t.rows || cols != t.cols) {
            throw ShapeError(name + ": tensor " + t.name + " has shape " + std::to_string(rows) + "x" +
                             std::to_string(cols) + ", expected " + std::to_string(t.rows) + "x" +
                             std::to_string(t.cols));
        }
        const auto& body = next();
        const char* p = body.data();
        const char* end = body.data() + body.size();
        for (auto& v : t.data) {
            while (p < end && *p == ' ') ++p;
            const auto res = std::from_chars(p, end, v);
            if (res.ec != std::errc()) throw ParseError(name, line_no, "bad value in tensor " + t.name);
            p = res.ptr;
        }
    }
    if (next() != "end") throw ParseError(name, line_no, "expected end marker");
    return ck;
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return read_checkpoint<Scalar>(in, path);
}

/// Throws ShapeError unless the checkpoint fits the given data.
template <typename Scalar>
void check_compatible(const Checkpoint<Scalar>& ck, const SplitBundle& split, const FeatureMatrices& features) {
    if (ck.shape.users != split.train.num_users() || ck.shape.items != split.train.num_items()) {
        throw ShapeError("checkpoint was trained on " + std::to_string(ck.shape.users) + " users x " +
                         std::to_string(ck.shape.items) + " items, dataset has " +
                         std::to_string(split.train.num_users()) + " x " + std::to_string(split.train.num_items()));
    }
    if (ck.shape.user_features != features.user.cols() || ck.shape.item_features != features.item.cols()) {
        throw ShapeError("checkpoint feature widths do not match the dataset");
    }
}

}  // namespace modurec
