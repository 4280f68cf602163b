#ifndef NEARMISS_CONFIG_HPP
#define NEARMISS_CONFIG_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "nearmiss/slowfast.hpp"
#include "nearmiss/trainer.hpp"

#define NEARMISS_VERSION "0.1.0"

namespace nearmiss::cli {

// One YAML file drives every stage; every field has a default and unknown
// keys are rejected. Flag overrides use dotted paths ("train.t_max=10").
struct RunConfig {
    struct Data {
        std::string manifest;  // default: <output_dir>/corpus/manifest.tsv
        double safe_lo = 0.0, safe_hi = 5.0;
        double nearmiss_lo = 5.0, nearmiss_hi = 10.0;
        std::array<double, 3> ratio{6, 2, 2};
        std::uint64_t seed = 0;
        int jitter_lo = 256, jitter_hi = 320, crop = 224;
    } data;

    struct Synth {
        int n = 300;
        double balance = 0.5;
        std::uint64_t master_seed = 0;
        int resolution = 112;
        double fps = 8.0;
        double duration_s = 15.0;
    } synth;

    sf::PathwayConfig model;

    struct Train {
        train::ScheduleConfig schedule;
        train::OptimConfig optim;
        std::uint64_t seed = 0;
        int num_threads = 0;  // 0 = hardware concurrency
    } train;

    struct Explain {
        std::string layer = "fast/res5";
        double threshold = 0.2;
        double opacity = 0.5;
        std::string target = "near_miss";
        int frame = -1;  // -1 = stack argmax frame
    } explain;

    struct Io {
        std::string output_dir = "out";
    } io;

    std::string manifest_path() const;
};

// path may be empty (pure defaults). Throws std::invalid_argument listing every
// unknown key and invariant violation found.
RunConfig parse_config(const std::string& path, const std::vector<std::string>& overrides = {});

std::string config_to_yaml(const RunConfig& cfg);
void write_effective_config(const std::string& path, const RunConfig& cfg);

}  // namespace nearmiss::cli

#endif
