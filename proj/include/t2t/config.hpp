#pragma once

#include <cstdint>
#include <string>

#include "t2t/metrics.hpp"
#include "t2t/objectives.hpp"
#include "t2t/pipeline.hpp"
#include "t2t/seq2seq.hpp"

namespace t2t {

// Merged view of everything a run needs. Serialized into every output
// directory as config.json; a run restarted from that file (same build, same
// data) reproduces its results bit for bit.
struct RunConfig {
    std::uint64_t seed = 1;

    // paths (flags may override)
    std::string dataset;      // training JSON-lines
    std::string val_dataset;  // optional validation split
    std::string out_dir = "runs";
    std::string eval_lm;  // optional eval-LM checkpoint for FPPL

    ModelConfig model;        // vocab sizes are filled from data at run time
    TrainingConfig training;
    PipelineOptions pipeline;

    struct Generate {
        bool greedy = true;
        double temperature = 1.0;
        std::size_t max_len = 100;
    } generate;

    EvalOptions evaluate;

    std::string to_json() const;
    static RunConfig from_json(const std::string& text);
    static RunConfig from_file(const std::string& path);
    void save(const std::string& path) const;

    void validate() const;
};

// Rebuild the architecture of a serialized model from its parameter shapes.
ModelConfig infer_model_config(const ParameterStore& store, const std::string& prefix,
                               std::size_t max_src_len = 100, std::size_t max_tgt_len = 100);

// Build/version stamp written next to each run's config.json.
std::string version_stamp();

}  // namespace t2t
