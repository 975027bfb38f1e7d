#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmdg/algorithms.hpp"
#include "pmdg/dataset.hpp"
#include "pmdg/models.hpp"
#include "pmdg/transforms.hpp"

namespace pmdg {

enum class TrainMode { pmdg, mdg };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
    int epochs = 1;
    int batch_size = 32;
    std::uint64_t seed = 0;
    int eval_every = 50;
    TrainMode mode = TrainMode::pmdg;
    std::vector<std::string> transform_names;  // pmdg mode; e.g. {"org","rand_conv","rand_conv"}
    std::string algorithm = "erm";
    nlohmann::json hparams;
    ModelSpec model_spec;
    double holdout_fraction = 0.2;
    std::vector<std::string> source_domains;  // exactly 1 for pmdg, >= 2 for mdg
    NormStats norm;

    void validate() const;
};

struct TrainLogEvent {
    int step = 0;
    double task_loss = 0.0;
    double penalty = 0.0;
    double total = 0.0;
    std::optional<double> val_accuracy;
};

struct Checkpoint {
    int step = 0;
    double val_accuracy = 0.0;
    std::vector<Tensor> state;  // full model state snapshot
};

// Instrumentation proving validation purity: no default augmentation and no
// pseudo-domain transform ever touches evaluation data.
struct PurityCounters {
    std::int64_t eval_batches = 0;
    std::int64_t eval_augmented_batches = 0;   // must stay 0
    std::int64_t eval_transform_calls = 0;     // must stay 0
};

struct TrainResult {
    Model model;  // restored to the selected checkpoint
    std::vector<TrainLogEvent> log;
    std::optional<Checkpoint> selected;
    int total_steps = 0;
    int steps_per_epoch = 0;
    std::map<std::string, int> train_domain_counts;  // training-split examples per domain
    std::int64_t transform_calls = 0;  // K per optimizer step in pmdg mode
    PurityCounters purity;
};

// Runs the full training loop: pmdg mode generates K pseudo-domain batches
// from each source mini-batch; mdg mode draws one batch per real domain per
// step (total optimizer steps equalized across modes). Periodically evaluates
// on the in-domain validation split without augmentation or transforms and
// returns the model restored to the best-validation checkpoint.
TrainResult train(const TrainConfig& cfg, const DomainDataset& data);

// Per-domain accuracy of argmax predictions (ties resolve to the lowest class
// index), eval mode, no augmentation.
std::map<std::string, double> evaluate(Model& model, const DomainDataset& ds,
                                       const std::vector<std::string>& domains,
                                       const NormStats& norm = {});

// Same contract with an arbitrary logits function (test stubs).
std::map<std::string, double> evaluate(const std::function<Tensor(const Tensor&)>& predictor,
                                       const DomainDataset& ds,
                                       const std::vector<std::string>& domains,
                                       const NormStats& norm = {});

// Best-validation selection: argmax val_accuracy, ties to the earliest step.
Checkpoint select_checkpoint(const std::vector<TrainLogEvent>& log);

void write_train_log_jsonl(const std::string& path, const std::vector<TrainLogEvent>& log);

}  // namespace pmdg
