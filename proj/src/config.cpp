#include "nearmiss/config.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace nearmiss::cli {

namespace fs = std::filesystem;

std::string RunConfig::manifest_path() const {
    if (!data.manifest.empty()) return data.manifest;
    return (fs::path(io.output_dir) / "corpus" / "manifest.tsv").string();
}

namespace {

struct Problems {
    std::vector<std::string> items;

    void add(const std::string& msg) { items.push_back(msg); }

    void raise_if_any() const {
        if (items.empty()) return;
        std::string joined = "invalid configuration:";
        for (const auto& p : items) joined += "\n  - " + p;
        throw std::invalid_argument(joined);
    }
};

// reads a scalar if present, flags conversion failures
template <typename T>
void get(const YAML::Node& section, const char* key, T& out, Problems& problems,
         const std::string& path) {
    if (!section.IsMap()) return;
    const YAML::Node v = section[key];
    if (!v) return;
    try {
        out = v.as<T>();
    } catch (const YAML::Exception&) {
        problems.add("key '" + path + "." + key + "' has the wrong type");
    }
}

void check_keys(const YAML::Node& section, const std::set<std::string>& known,
                const std::string& path, Problems& problems) {
    if (!section.IsDefined() || section.IsNull()) return;
    if (!section.IsMap()) {
        problems.add("section '" + path + "' must be a map");
        return;
    }
    for (const auto& kv : section) {
        std::string key = kv.first.as<std::string>();
        if (!known.count(key)) problems.add("unknown key '" + path + "." + key + "'");
    }
}

void apply_override(YAML::Node root, const std::string& spec, Problems& problems) {
    auto eq = spec.find('=');
    if (eq == std::string::npos) {
        problems.add("override '" + spec + "' is not of the form section.key=value");
        return;
    }
    std::string path = spec.substr(0, eq), value = spec.substr(eq + 1);
    std::vector<std::string> parts;
    std::istringstream ps(path);
    std::string part;
    while (std::getline(ps, part, '.')) parts.push_back(part);
    if (parts.empty()) {
        problems.add("override '" + spec + "' has an empty key path");
        return;
    }
    YAML::Node node = root;
    for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
        YAML::Node next = node[parts[i]];
        node.reset(node);  // keep alive
        node = next;
    }
    node[parts.back()] = YAML::Load(value);
}

}  // namespace

RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides) {
    Problems problems;
    YAML::Node root(YAML::NodeType::Map);
    if (!path.empty()) {
        try {
            root = YAML::LoadFile(path);
            if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
        } catch (const YAML::Exception& e) {
            throw std::invalid_argument("config: cannot parse " + path + ": " + e.what());
        }
        if (!root.IsMap()) throw std::invalid_argument("config: " + path + " is not a key-value tree");
    }
    for (const auto& o : overrides) apply_override(root, o, problems);

    check_keys(root, {"data", "synth", "model", "train", "explain", "io"}, "config", problems);

    RunConfig cfg;
    const YAML::Node data = root["data"];
    check_keys(data,
               {"manifest", "safe_lo", "safe_hi", "nearmiss_lo", "nearmiss_hi", "ratio", "seed",
                "jitter_lo", "jitter_hi", "crop"},
               "data", problems);
    get(data, "manifest", cfg.data.manifest, problems, "data");
    get(data, "safe_lo", cfg.data.safe_lo, problems, "data");
    get(data, "safe_hi", cfg.data.safe_hi, problems, "data");
    get(data, "nearmiss_lo", cfg.data.nearmiss_lo, problems, "data");
    get(data, "nearmiss_hi", cfg.data.nearmiss_hi, problems, "data");
    if (data && data["ratio"]) {
        try {
            auto r = data["ratio"].as<std::vector<double>>();
            if (r.size() != 3) problems.add("data.ratio must have exactly 3 components");
            else cfg.data.ratio = {r[0], r[1], r[2]};
        } catch (const YAML::Exception&) {
            problems.add("key 'data.ratio' has the wrong type");
        }
    }
    get(data, "seed", cfg.data.seed, problems, "data");
    get(data, "jitter_lo", cfg.data.jitter_lo, problems, "data");
    get(data, "jitter_hi", cfg.data.jitter_hi, problems, "data");
    get(data, "crop", cfg.data.crop, problems, "data");

    const YAML::Node synth = root["synth"];
    check_keys(synth, {"n", "balance", "master_seed", "resolution", "fps", "duration_s"}, "synth",
               problems);
    get(synth, "n", cfg.synth.n, problems, "synth");
    get(synth, "balance", cfg.synth.balance, problems, "synth");
    get(synth, "master_seed", cfg.synth.master_seed, problems, "synth");
    get(synth, "resolution", cfg.synth.resolution, problems, "synth");
    get(synth, "fps", cfg.synth.fps, problems, "synth");
    get(synth, "duration_s", cfg.synth.duration_s, problems, "synth");

    const YAML::Node model = root["model"];
    check_keys(model,
               {"alpha", "beta_inv", "slow_frames", "backbone_depth", "base_width",
                "nonlocal_stages", "num_classes", "dropout_rate", "in_channels", "input_size"},
               "model", problems);
    get(model, "alpha", cfg.model.alpha, problems, "model");
    get(model, "beta_inv", cfg.model.beta_inv, problems, "model");
    get(model, "slow_frames", cfg.model.slow_frames, problems, "model");
    get(model, "backbone_depth", cfg.model.backbone_depth, problems, "model");
    get(model, "base_width", cfg.model.base_width, problems, "model");
    get(model, "num_classes", cfg.model.num_classes, problems, "model");
    get(model, "dropout_rate", cfg.model.dropout_rate, problems, "model");
    get(model, "in_channels", cfg.model.in_channels, problems, "model");
    get(model, "input_size", cfg.model.input_size, problems, "model");
    if (model && model["nonlocal_stages"]) {
        try {
            auto v = model["nonlocal_stages"].as<std::vector<std::string>>();
            cfg.model.nonlocal_stages = std::set<std::string>(v.begin(), v.end());
        } catch (const YAML::Exception&) {
            problems.add("key 'model.nonlocal_stages' has the wrong type");
        }
    }

    const YAML::Node tr = root["train"];
    check_keys(tr,
               {"lr_min", "lr_max", "warmup_start", "warmup_epochs", "t_max", "momentum",
                "weight_decay", "batch_size", "max_epochs", "seed", "num_threads"},
               "train", problems);
    get(tr, "lr_min", cfg.train.schedule.lr_min, problems, "train");
    get(tr, "lr_max", cfg.train.schedule.lr_max, problems, "train");
    get(tr, "warmup_start", cfg.train.schedule.warmup_start, problems, "train");
    get(tr, "warmup_epochs", cfg.train.schedule.warmup_epochs, problems, "train");
    get(tr, "t_max", cfg.train.schedule.t_max, problems, "train");
    get(tr, "momentum", cfg.train.optim.momentum, problems, "train");
    get(tr, "weight_decay", cfg.train.optim.weight_decay, problems, "train");
    get(tr, "batch_size", cfg.train.optim.batch_size, problems, "train");
    get(tr, "max_epochs", cfg.train.optim.max_epochs, problems, "train");
    get(tr, "seed", cfg.train.seed, problems, "train");
    get(tr, "num_threads", cfg.train.num_threads, problems, "train");

    const YAML::Node ex = root["explain"];
    check_keys(ex, {"layer", "threshold", "opacity", "target", "frame"}, "explain", problems);
    get(ex, "layer", cfg.explain.layer, problems, "explain");
    get(ex, "threshold", cfg.explain.threshold, problems, "explain");
    get(ex, "opacity", cfg.explain.opacity, problems, "explain");
    get(ex, "target", cfg.explain.target, problems, "explain");
    get(ex, "frame", cfg.explain.frame, problems, "explain");

    const YAML::Node io = root["io"];
    check_keys(io, {"output_dir"}, "io", problems);
    get(io, "output_dir", cfg.io.output_dir, problems, "io");
    if (const char* env = std::getenv("NEARMISS_OUTPUT_DIR"); env && *env)
        cfg.io.output_dir = env;

    // fail-fast whole-config validation, every problem reported together
    auto probe = [&](auto&& fn, const std::string& where) {
        try {
            fn();
        } catch (const std::exception& e) {
            problems.add(where + ": " + e.what());
        }
    };
    probe([&] { cfg.model.validate(); }, "model");
    probe([&] { cfg.train.schedule.validate(); }, "train");
    probe([&] { cfg.train.optim.validate(); }, "train");
    probe(
        [&] {
            clips::SegmentationPolicy policy{{cfg.data.safe_lo, cfg.data.safe_hi, false},
                                             {cfg.data.nearmiss_lo, cfg.data.nearmiss_hi, true}};
            policy.validate(std::max(cfg.data.safe_hi, cfg.data.nearmiss_hi));
        },
        "data");
    if (cfg.data.jitter_lo <= 0 || cfg.data.jitter_lo > cfg.data.jitter_hi)
        problems.add("data: need 0 < jitter_lo <= jitter_hi");
    else if (cfg.data.crop > cfg.data.jitter_lo)
        problems.add("data: crop " + std::to_string(cfg.data.crop) +
                     " larger than jitter_lo " + std::to_string(cfg.data.jitter_lo));
    if (cfg.synth.n <= 0) problems.add("synth: n must be positive");
    if (cfg.synth.balance < 0 || cfg.synth.balance > 1)
        problems.add("synth: balance must lie in [0, 1]");
    if (cfg.synth.resolution < 16) problems.add("synth: resolution must be >= 16");
    if (cfg.synth.fps <= 0 || cfg.synth.duration_s <= 0)
        problems.add("synth: fps and duration_s must be positive");
    if (cfg.explain.threshold <= 0 || cfg.explain.threshold > 1)
        problems.add("explain: threshold must lie in (0, 1]");
    if (cfg.explain.opacity < 0 || cfg.explain.opacity > 1)
        problems.add("explain: opacity must lie in [0, 1]");
    if (cfg.explain.target != "near_miss" && cfg.explain.target != "safe_driving")
        problems.add("explain: target must be near_miss or safe_driving");
    if (cfg.train.num_threads < 0) problems.add("train: num_threads must be >= 0");

    problems.raise_if_any();
    return cfg;
}

std::string config_to_yaml(const RunConfig& c) {
    YAML::Emitter out;
    out << YAML::BeginMap;
    out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "manifest" << YAML::Value << c.data.manifest;
    out << YAML::Key << "safe_lo" << YAML::Value << c.data.safe_lo;
    out << YAML::Key << "safe_hi" << YAML::Value << c.data.safe_hi;
    out << YAML::Key << "nearmiss_lo" << YAML::Value << c.data.nearmiss_lo;
    out << YAML::Key << "nearmiss_hi" << YAML::Value << c.data.nearmiss_hi;
    out << YAML::Key << "ratio" << YAML::Value << YAML::Flow
        << std::vector<double>{c.data.ratio[0], c.data.ratio[1], c.data.ratio[2]};
    out << YAML::Key << "seed" << YAML::Value << c.data.seed;
    out << YAML::Key << "jitter_lo" << YAML::Value << c.data.jitter_lo;
    out << YAML::Key << "jitter_hi" << YAML::Value << c.data.jitter_hi;
    out << YAML::Key << "crop" << YAML::Value << c.data.crop;
    out << YAML::EndMap;
    out << YAML::Key << "synth" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "n" << YAML::Value << c.synth.n;
    out << YAML::Key << "balance" << YAML::Value << c.synth.balance;
    out << YAML::Key << "master_seed" << YAML::Value << c.synth.master_seed;
    out << YAML::Key << "resolution" << YAML::Value << c.synth.resolution;
    out << YAML::Key << "fps" << YAML::Value << c.synth.fps;
    out << YAML::Key << "duration_s" << YAML::Value << c.synth.duration_s;
    out << YAML::EndMap;
    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "alpha" << YAML::Value << c.model.alpha;
    out << YAML::Key << "beta_inv" << YAML::Value << c.model.beta_inv;
    out << YAML::Key << "slow_frames" << YAML::Value << c.model.slow_frames;
    out << YAML::Key << "backbone_depth" << YAML::Value << c.model.backbone_depth;
    out << YAML::Key << "base_width" << YAML::Value << c.model.base_width;
    out << YAML::Key << "nonlocal_stages" << YAML::Value << YAML::Flow
        << std::vector<std::string>(c.model.nonlocal_stages.begin(),
                                    c.model.nonlocal_stages.end());
    out << YAML::Key << "num_classes" << YAML::Value << c.model.num_classes;
    out << YAML::Key << "dropout_rate" << YAML::Value << c.model.dropout_rate;
    out << YAML::Key << "in_channels" << YAML::Value << c.model.in_channels;
    out << YAML::Key << "input_size" << YAML::Value << c.model.input_size;
    out << YAML::EndMap;
    out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "lr_min" << YAML::Value << c.train.schedule.lr_min;
    out << YAML::Key << "lr_max" << YAML::Value << c.train.schedule.lr_max;
    out << YAML::Key << "warmup_start" << YAML::Value << c.train.schedule.warmup_start;
    out << YAML::Key << "warmup_epochs" << YAML::Value << c.train.schedule.warmup_epochs;
    out << YAML::Key << "t_max" << YAML::Value << c.train.schedule.t_max;
    out << YAML::Key << "momentum" << YAML::Value << c.train.optim.momentum;
    out << YAML::Key << "weight_decay" << YAML::Value << c.train.optim.weight_decay;
    out << YAML::Key << "batch_size" << YAML::Value << c.train.optim.batch_size;
    out << YAML::Key << "max_epochs" << YAML::Value << c.train.optim.max_epochs;
    out << YAML::Key << "seed" << YAML::Value << c.train.seed;
    out << YAML::Key << "num_threads" << YAML::Value << c.train.num_threads;
    out << YAML::EndMap;
    out << YAML::Key << "explain" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "layer" << YAML::Value << c.explain.layer;
    out << YAML::Key << "threshold" << YAML::Value << c.explain.threshold;
    out << YAML::Key << "opacity" << YAML::Value << c.explain.opacity;
    out << YAML::Key << "target" << YAML::Value << c.explain.target;
    out << YAML::Key << "frame" << YAML::Value << c.explain.frame;
    out << YAML::EndMap;
    out << YAML::Key << "io" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "output_dir" << YAML::Value << c.io.output_dir;
    out << YAML::EndMap;
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

void write_effective_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("config: cannot write " + path);
    out << config_to_yaml(cfg);
}

}  // namespace nearmiss::cli
