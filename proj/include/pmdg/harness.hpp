#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmdg/dataset.hpp"
#include "pmdg/trainer.hpp"

namespace pmdg {

struct DatasetConfig {
    enum class Type { synthetic, folder };
    Type type = Type::synthetic;
    SyntheticShiftSpec synthetic;
    std::string folder_root;
    int image_size = 64;  // folder loading size

    static DatasetConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
    DomainDataset load() const;
};

/**
 * Declarative description of one experiment cell: dataset x source x mode x
 * algorithm x transform set, evaluated on `targets` over `trials` seeds.
 * Exclusions drop transforms from the set for the targets that name them
 * (targets sharing an effective set share a training run).
 */
struct ExperimentConfig {
    DatasetConfig dataset;
    std::vector<std::string> source;
    std::vector<std::string> targets;
    TrainMode mode = TrainMode::pmdg;
    std::string algorithm = "erm";
    nlohmann::json hparams = nlohmann::json::object();
    std::vector<std::string> transforms = {"org"};
    int trials = 3;
    TrainConfig train;
    std::map<std::string, std::vector<std::string>> exclusions;

    void validate() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    nlohmann::json to_json() const;
};

struct RunRecord {
    int schema_version = 1;
    std::string config_digest;
    nlohmann::json resolved_config;
    int trial = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> transforms_used;
    std::map<std::string, double> target_accuracy;
    double val_accuracy = 0.0;
    int selected_step = 0;
    int total_steps = 0;
    std::map<std::string, int> sample_counts;
    double wall_time_sec = 0.0;
    std::string log_path;

    nlohmann::json to_json() const;
    static RunRecord from_json(const nlohmann::json& j);
    // mean accuracy over this record's targets
    double mean_target_accuracy() const;
};

// Stable digest of a resolved config (wall time and trial excluded by design).
std::string config_digest(const nlohmann::json& resolved);

// Runs `trials` seeded trials (seed+0..trials-1), one training per
// (trial, effective-transform-set group). Logs are written under log_dir when
// non-empty, with deterministic names.
std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg, const std::string& log_dir = "");

// ---------------------------------------------------------------------------
// record persistence (append-only JSONL)
// ---------------------------------------------------------------------------

void append_records_jsonl(const std::string& path, const std::vector<RunRecord>& records,
                          bool overwrite_existing = false);
std::vector<RunRecord> read_records_jsonl(const std::string& path);

// ---------------------------------------------------------------------------
// aggregation and reports
// ---------------------------------------------------------------------------

struct AggregateCell {
    double mean_pct = 0.0;
    double stderr_pct = 0.0;
    int trials = 0;
    bool single_trial = false;
    std::string formatted;  // "62.0 ± 1.2"
};

// Mean and standard error (sample std / sqrt(trials)) of raw accuracies in
// [0,1], formatted to one decimal in percent.
AggregateCell aggregate(const std::vector<double>& accuracies);
std::string format_pct(double mean_pct, double stderr_pct);

struct GainMatrix {
    std::vector<std::string> row_keys;  // transform-set signatures, registry order
    std::vector<std::string> col_keys;  // algorithm names, registry order
    std::vector<std::vector<double>> gains;  // [row][col], percentage points
};

// Cell = mean_acc(method) - mean_acc(baseline) in points. Baseline records
// must be ERM without pseudo-domains (transform set ["org"]).
GainMatrix gain_matrix(const std::vector<RunRecord>& records,
                       const std::vector<RunRecord>& baseline_records);

std::string transform_signature(const std::vector<std::string>& names);

struct EqualDataResult {
    int n = 0;
    std::vector<RunRecord> pmdg_records;
    std::vector<RunRecord> mdg_records;
};

// Fig.4-style paired arms: PMDG trains on subsample(source, n) with the
// shared transform set; MDG trains on three per-domain subsamples whose
// counts sum exactly to n (floor(n/3) each, remainders to the first domains).
EqualDataResult equal_data_protocol(const DomainDataset& ds, const std::string& source,
                                    const std::vector<std::string>& mdg_domains, int n,
                                    const ExperimentConfig& shared, const std::string& log_dir = "");

struct CorrelationReport {
    double pearson = 0.0;
    double spearman = 0.0;
    std::vector<std::string> keys;
    std::vector<std::pair<double, double>> points;  // (mdg, pmdg)
};

CorrelationReport correlation_report(const std::map<std::string, double>& mdg_accs,
                                     const std::map<std::string, double>& pmdg_accs);

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y);
double spearman_correlation(const std::vector<double>& x, const std::vector<double>& y);

enum class ReportKind { table, gains, equal_data, correlation };
ReportKind report_kind_from_string(const std::string& s);

// Writes <kind>.csv and <kind>.md under out_dir (plus a small PNG chart for
// the kinds that have one). Returns the list of file paths written.
std::vector<std::string> render_report(ReportKind kind, const std::vector<RunRecord>& records,
                                       const std::string& out_dir);

}  // namespace pmdg
