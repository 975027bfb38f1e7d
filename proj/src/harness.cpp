#include "pmdg/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "pmdg/rng.hpp"
#include "pmdg/transforms.hpp"

namespace fs = std::filesystem;

namespace pmdg {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& ctx) {
    if (!j.is_object()) throw ValidationError("config section '" + ctx + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) throw ValidationError("unknown config key: " + ctx + k);
    }
}

std::vector<std::string> string_list(const json& j, const std::string& ctx) {
    if (j.is_string()) return {j.get<std::string>()};
    if (j.is_array()) {
        std::vector<std::string> out;
        for (const auto& v : j) out.push_back(v.get<std::string>());
        return out;
    }
    throw ValidationError("config key '" + ctx + "' must be a string or array of strings");
}

Background background_from_string(const std::string& s) {
    if (s == "flat") return Background::flat;
    if (s == "noise") return Background::noise;
    if (s == "stripes") return Background::stripes;
    throw ValidationError("unknown background: " + s + " (expect flat|noise|stripes)");
}

std::string to_string(Background b) {
    switch (b) {
        case Background::flat: return "flat";
        case Background::noise: return "noise";
        default: return "stripes";
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// dataset config
// ---------------------------------------------------------------------------

DatasetConfig DatasetConfig::from_json(const json& j) {
    DatasetConfig cfg;
    std::string type = j.value("type", "synthetic");
    if (type == "synthetic") {
        check_keys(j, {"type", "name", "num_classes", "image_size", "samples_per_domain", "seed",
                       "domains"},
                   "dataset.");
        cfg.type = Type::synthetic;
        SyntheticShiftSpec& s = cfg.synthetic;
        s.name = j.value("name", "synthetic");
        s.num_classes = j.value("num_classes", 2);
        s.image_size = j.value("image_size", 16);
        s.samples_per_domain = j.value("samples_per_domain", 100);
        s.seed = j.value("seed", 0ULL);
        if (!j.contains("domains")) throw ValidationError("dataset.domains is required");
        for (const auto& dj : j.at("domains")) {
            check_keys(dj, {"name", "hue_palette", "background", "rotation_range",
                            "color_class_correlation"},
                       "dataset.domains.");
            DomainShift d;
            d.name = dj.value("name", "");
            d.hue_palette = dj.value("hue_palette", std::vector<double>{0.0, 120.0});
            d.background = background_from_string(dj.value("background", "flat"));
            d.rotation_range = dj.value("rotation_range", 0.0);
            d.color_class_correlation = dj.value("color_class_correlation", 1.0);
            s.domains.push_back(std::move(d));
        }
        s.validate();
    } else if (type == "folder") {
        check_keys(j, {"type", "root", "image_size"}, "dataset.");
        cfg.type = Type::folder;
        if (!j.contains("root")) throw ValidationError("dataset.root is required for folder datasets");
        cfg.folder_root = j.at("root").get<std::string>();
        cfg.image_size = j.value("image_size", 64);
    } else {
        throw ValidationError("unknown dataset.type: " + type + " (expect synthetic|folder)");
    }
    return cfg;
}

json DatasetConfig::to_json() const {
    json j;
    if (type == Type::synthetic) {
        j["type"] = "synthetic";
        j["name"] = synthetic.name;
        j["num_classes"] = synthetic.num_classes;
        j["image_size"] = synthetic.image_size;
        j["samples_per_domain"] = synthetic.samples_per_domain;
        j["seed"] = synthetic.seed;
        json domains = json::array();
        for (const auto& d : synthetic.domains) {
            domains.push_back({{"name", d.name},
                               {"hue_palette", d.hue_palette},
                               {"background", to_string(d.background)},
                               {"rotation_range", d.rotation_range},
                               {"color_class_correlation", d.color_class_correlation}});
        }
        j["domains"] = domains;
    } else {
        j["type"] = "folder";
        j["root"] = folder_root;
        j["image_size"] = image_size;
    }
    return j;
}

DomainDataset DatasetConfig::load() const {
    if (type == Type::synthetic) return generate_synthetic(synthetic);
    return load_image_folder(folder_root, image_size);
}

// ---------------------------------------------------------------------------
// experiment config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
    if (trials < 1) throw ValidationError("trials must be >= 1");
    if (source.empty()) throw ValidationError("source must name at least one domain");
    for (const auto& [target, names] : exclusions) {
        for (const auto& n : names) {
            const auto& reg = registered_transform_names();
            if (std::find(reg.begin(), reg.end(), n) == reg.end()) {
                throw ValidationError("exclusions reference unknown transform: " + n);
            }
        }
    }
    if (mode == TrainMode::pmdg && transforms.empty()) {
        throw ValidationError("pmdg mode requires a non-empty transform set");
    }
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    check_keys(j, {"dataset", "source", "targets", "mode", "algorithm", "hparams", "transforms",
                   "trials", "train", "exclusions"},
               "");
    ExperimentConfig cfg;
    if (!j.contains("dataset")) throw ValidationError("config key 'dataset' is required");
    cfg.dataset = DatasetConfig::from_json(j.at("dataset"));
    if (!j.contains("source")) throw ValidationError("config key 'source' is required");
    cfg.source = string_list(j.at("source"), "source");
    if (j.contains("targets")) cfg.targets = string_list(j.at("targets"), "targets");
    cfg.mode = train_mode_from_string(j.value("mode", "pmdg"));
    cfg.algorithm = j.value("algorithm", "erm");
    cfg.hparams = j.value("hparams", json::object());
    if (j.contains("transforms")) cfg.transforms = string_list(j.at("transforms"), "transforms");
    cfg.trials = j.value("trials", 3);
    if (j.contains("exclusions")) {
        for (const auto& [target, names] : j.at("exclusions").items()) {
            cfg.exclusions[target] = string_list(names, "exclusions." + target);
        }
    }

    if (j.contains("train")) {
        const json& t = j.at("train");
        check_keys(t, {"epochs", "batch_size", "eval_every", "holdout_fraction", "seed", "model",
                       "norm_mean", "norm_std"},
                   "train.");
        cfg.train.epochs = t.value("epochs", 1);
        cfg.train.batch_size = t.value("batch_size", 32);
        cfg.train.eval_every = t.value("eval_every", 50);
        cfg.train.holdout_fraction = t.value("holdout_fraction", 0.2);
        cfg.train.seed = t.value("seed", 0ULL);
        if (t.contains("model")) {
            const json& m = t.at("model");
            check_keys(m, {"kind", "feature_dim", "widths", "norm"}, "train.model.");
            cfg.train.model_spec.kind = model_kind_from_string(m.value("kind", "small_cnn"));
            cfg.train.model_spec.feature_dim = m.value("feature_dim", 128);
            cfg.train.model_spec.widths = m.value("widths", std::vector<int>{16, 32});
            cfg.train.model_spec.norm = norm_kind_from_string(m.value("norm", "batch"));
        }
        auto read3 = [&t](const char* key, double* out) {
            if (!t.contains(key)) return;
            auto v = t.at(key).get<std::vector<double>>();
            if (v.size() != 3) throw ValidationError(std::string("train.") + key + " must have 3 entries");
            for (int i = 0; i < 3; ++i) out[i] = v[static_cast<std::size_t>(i)];
        };
        read3("norm_mean", cfg.train.norm.mean);
        read3("norm_std", cfg.train.norm.std);
    }
    cfg.validate();
    return cfg;
}

json ExperimentConfig::to_json() const {
    json j;
    j["dataset"] = dataset.to_json();
    j["source"] = source;
    j["targets"] = targets;
    j["mode"] = pmdg::to_string(mode);
    j["algorithm"] = algorithm;
    j["hparams"] = hparams;
    j["transforms"] = transforms;
    j["trials"] = trials;
    json ex = json::object();
    for (const auto& [t, names] : exclusions) ex[t] = names;
    j["exclusions"] = ex;
    j["train"] = {{"epochs", train.epochs},
                  {"batch_size", train.batch_size},
                  {"eval_every", train.eval_every},
                  {"holdout_fraction", train.holdout_fraction},
                  {"seed", train.seed},
                  {"model",
                   {{"kind", pmdg::to_string(train.model_spec.kind)},
                    {"feature_dim", train.model_spec.feature_dim},
                    {"widths", train.model_spec.widths},
                    {"norm", pmdg::to_string(train.model_spec.norm)}}},
                  {"norm_mean", std::vector<double>{train.norm.mean[0], train.norm.mean[1], train.norm.mean[2]}},
                  {"norm_std", std::vector<double>{train.norm.std[0], train.norm.std[1], train.norm.std[2]}}};
    return j;
}

// ---------------------------------------------------------------------------
// records
// ---------------------------------------------------------------------------

std::string config_digest(const json& resolved) {
    std::string dump = resolved.dump();
    std::uint64_t h1 = fnv1a(dump);
    std::uint64_t h2 = fnv1a(dump + "#pmdg");
    char buf[33];
    std::snprintf(buf, sizeof(buf), "%016llx%016llx", static_cast<unsigned long long>(h1),
                  static_cast<unsigned long long>(h2));
    return std::string(buf);
}

json RunRecord::to_json() const {
    json j;
    j["schema_version"] = schema_version;
    j["config_digest"] = config_digest;
    j["resolved_config"] = resolved_config;
    j["trial"] = trial;
    j["seed"] = seed;
    j["transforms_used"] = transforms_used;
    j["target_accuracy"] = target_accuracy;
    j["val_accuracy"] = val_accuracy;
    j["selected_step"] = selected_step;
    j["total_steps"] = total_steps;
    j["sample_counts"] = sample_counts;
    j["wall_time_sec"] = wall_time_sec;
    j["log_path"] = log_path;
    return j;
}

RunRecord RunRecord::from_json(const json& j) {
    RunRecord r;
    r.schema_version = j.value("schema_version", 1);
    r.config_digest = j.value("config_digest", "");
    r.resolved_config = j.value("resolved_config", json::object());
    r.trial = j.value("trial", 0);
    r.seed = j.value("seed", 0ULL);
    r.transforms_used = j.value("transforms_used", std::vector<std::string>{});
    if (j.contains("target_accuracy")) {
        for (const auto& [k, v] : j.at("target_accuracy").items()) r.target_accuracy[k] = v.get<double>();
    }
    r.val_accuracy = j.value("val_accuracy", 0.0);
    r.selected_step = j.value("selected_step", 0);
    r.total_steps = j.value("total_steps", 0);
    if (j.contains("sample_counts")) {
        for (const auto& [k, v] : j.at("sample_counts").items()) r.sample_counts[k] = v.get<int>();
    }
    r.wall_time_sec = j.value("wall_time_sec", 0.0);
    r.log_path = j.value("log_path", "");
    return r;
}

double RunRecord::mean_target_accuracy() const {
    if (target_accuracy.empty()) return 0.0;
    double s = 0.0;
    for (const auto& [k, v] : target_accuracy) s += v;
    return s / static_cast<double>(target_accuracy.size());
}

void append_records_jsonl(const std::string& path, const std::vector<RunRecord>& records,
                          bool overwrite_existing) {
    std::vector<RunRecord> existing;
    if (fs::exists(path)) existing = read_records_jsonl(path);
    auto key = [](const RunRecord& r) { return r.config_digest + "#" + std::to_string(r.trial); };

    std::set<std::string> incoming;
    for (const auto& r : records) incoming.insert(key(r));

    std::vector<RunRecord> out;
    for (const auto& r : existing) {
        if (overwrite_existing && incoming.count(key(r))) continue;  // replaced below
        out.push_back(r);
    }
    std::set<std::string> present;
    for (const auto& r : out) present.insert(key(r));
    for (const auto& r : records) {
        if (present.count(key(r))) continue;  // idempotent skip
        out.push_back(r);
        present.insert(key(r));
    }

    if (!path.empty()) {
        fs::path p(path);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
    }
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write records: " + path);
    for (const auto& r : out) f << r.to_json().dump() << "\n";
}

std::vector<RunRecord> read_records_jsonl(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read records: " + path);
    std::vector<RunRecord> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        out.push_back(RunRecord::from_json(json::parse(line)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// experiment execution
// ---------------------------------------------------------------------------

namespace {

struct TargetGroup {
    std::vector<std::string> targets;
    std::vector<std::string> transforms;
};

std::vector<TargetGroup> group_targets(const ExperimentConfig& cfg,
                                       const std::vector<std::string>& targets) {
    std::vector<TargetGroup> groups;
    for (const auto& target : targets) {
        std::vector<std::string> effective = cfg.transforms;
        auto it = cfg.exclusions.find(target);
        if (it != cfg.exclusions.end() && cfg.mode == TrainMode::pmdg) {
            std::vector<std::string> kept;
            for (const auto& t : effective) {
                if (std::find(it->second.begin(), it->second.end(), t) == it->second.end()) {
                    kept.push_back(t);
                }
            }
            effective = kept;
            if (effective.empty()) {
                throw ValidationError("exclusions for target '" + target + "' empty the transform set");
            }
        }
        bool merged = false;
        for (auto& g : groups) {
            if (g.transforms == effective) {
                g.targets.push_back(target);
                merged = true;
                break;
            }
        }
        if (!merged) groups.push_back({{target}, effective});
    }
    return groups;
}

RunRecord run_single(const ExperimentConfig& cfg, const DomainDataset& data,
                     const TargetGroup& group, int trial, const std::string& log_dir) {
    TrainConfig tc = cfg.train;
    tc.mode = cfg.mode;
    tc.algorithm = cfg.algorithm;
    tc.hparams = cfg.hparams;
    tc.transform_names = group.transforms;
    tc.source_domains = cfg.source;
    tc.seed = cfg.train.seed + static_cast<std::uint64_t>(trial);

    json resolved = cfg.to_json();
    resolved["targets"] = group.targets;
    resolved["resolved_transforms"] = group.transforms;
    std::string digest = config_digest(resolved);

    auto t0 = std::chrono::steady_clock::now();
    TrainResult tr = train(tc, data);
    auto accs = evaluate(tr.model, data, group.targets, tc.norm);
    auto t1 = std::chrono::steady_clock::now();

    RunRecord rec;
    rec.config_digest = digest;
    rec.resolved_config = resolved;
    rec.trial = trial;
    rec.seed = tc.seed;
    rec.transforms_used = cfg.mode == TrainMode::pmdg ? group.transforms : std::vector<std::string>{};
    rec.target_accuracy = accs;
    rec.val_accuracy = tr.selected ? tr.selected->val_accuracy : 0.0;
    rec.selected_step = tr.selected ? tr.selected->step : 0;
    rec.total_steps = tr.total_steps;
    // audited pre-split totals per training domain
    for (const auto& d : cfg.source) {
        int count = 0;
        for (const auto& ex : data.examples) {
            if (ex.domain == d) ++count;
        }
        rec.sample_counts[d] = count;
    }
    rec.wall_time_sec = std::chrono::duration<double>(t1 - t0).count();
    if (!log_dir.empty()) {
        fs::create_directories(log_dir);
        rec.log_path = (fs::path(log_dir) / (digest + "_t" + std::to_string(trial) + ".jsonl")).string();
        write_train_log_jsonl(rec.log_path, tr.log);
    }
    return rec;
}

}  // namespace

std::vector<RunRecord> run_experiment(const ExperimentConfig& cfg, const std::string& log_dir) {
    cfg.validate();
    DomainDataset data = cfg.dataset.load();
    for (const auto& d : cfg.source) {
        if (std::find(data.domains.begin(), data.domains.end(), d) == data.domains.end()) {
            throw ValidationError("source domain not in dataset: " + d);
        }
    }
    std::vector<std::string> targets = cfg.targets;
    if (targets.empty()) {
        for (const auto& d : data.domains) {
            if (std::find(cfg.source.begin(), cfg.source.end(), d) == cfg.source.end()) {
                targets.push_back(d);
            }
        }
    }
    if (targets.empty()) throw ValidationError("no target domains (set 'targets' explicitly)");
    for (const auto& t : targets) {
        if (std::find(data.domains.begin(), data.domains.end(), t) == data.domains.end()) {
            throw ValidationError("target domain not in dataset: " + t);
        }
    }

    auto groups = group_targets(cfg, targets);
    std::vector<RunRecord> records;
    for (int trial = 0; trial < cfg.trials; ++trial) {
        for (const auto& group : groups) {
            records.push_back(run_single(cfg, data, group, trial, log_dir));
        }
    }
    return records;
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

std::string format_pct(double mean_pct, double stderr_pct) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.1f ± %.1f", mean_pct, stderr_pct);
    return std::string(buf);
}

AggregateCell aggregate(const std::vector<double>& accuracies) {
    if (accuracies.empty()) throw ValidationError("aggregate: empty cell");
    AggregateCell cell;
    cell.trials = static_cast<int>(accuracies.size());
    cell.single_trial = cell.trials == 1;
    double mean = std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / cell.trials;
    double var = 0.0;
    for (double a : accuracies) var += (a - mean) * (a - mean);
    double sample_std = cell.trials > 1 ? std::sqrt(var / (cell.trials - 1)) : 0.0;
    cell.mean_pct = 100.0 * mean;
    cell.stderr_pct = 100.0 * sample_std / std::sqrt(static_cast<double>(cell.trials));
    cell.formatted = format_pct(cell.mean_pct, cell.stderr_pct);
    return cell;
}

// ---------------------------------------------------------------------------
// gains
// ---------------------------------------------------------------------------

std::string transform_signature(const std::vector<std::string>& names) {
    if (names.empty()) return "-";
    std::string s;
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) s += "+";
        s += names[i];
    }
    return s;
}

namespace {

std::vector<int> signature_registry_indices(const std::string& signature) {
    const auto& reg = registered_transform_names();
    std::vector<int> idx;
    std::stringstream ss(signature);
    std::string part;
    while (std::getline(ss, part, '+')) {
        auto it = std::find(reg.begin(), reg.end(), part);
        idx.push_back(it == reg.end() ? static_cast<int>(reg.size()) : static_cast<int>(it - reg.begin()));
    }
    return idx;
}

}  // namespace

GainMatrix gain_matrix(const std::vector<RunRecord>& records,
                       const std::vector<RunRecord>& baseline_records) {
    if (baseline_records.empty()) throw ValidationError("gain_matrix: missing baseline records");
    for (const auto& r : baseline_records) {
        if (r.resolved_config.value("algorithm", "") != "erm" ||
            transform_signature(r.transforms_used) != "org") {
            throw ValidationError(
                "gain_matrix: baseline must be ERM with transform set [org] (no pseudo-domains)");
        }
    }
    double baseline_acc = 0.0;
    for (const auto& r : baseline_records) baseline_acc += r.mean_target_accuracy();
    baseline_acc /= static_cast<double>(baseline_records.size());

    // collect row and column keys
    std::set<std::string> row_set;
    std::set<std::string> col_set;
    for (const auto& r : records) {
        row_set.insert(transform_signature(r.transforms_used));
        col_set.insert(r.resolved_config.value("algorithm", ""));
    }
    GainMatrix m;
    m.row_keys.assign(row_set.begin(), row_set.end());
    std::sort(m.row_keys.begin(), m.row_keys.end(), [](const std::string& a, const std::string& b) {
        auto ia = signature_registry_indices(a), ib = signature_registry_indices(b);
        return ia != ib ? ia < ib : a < b;
    });
    for (const auto& alg : Algorithm::registry()) {
        if (col_set.count(alg)) m.col_keys.push_back(alg);
    }
    for (const auto& c : col_set) {
        if (std::find(m.col_keys.begin(), m.col_keys.end(), c) == m.col_keys.end()) {
            m.col_keys.push_back(c);
        }
    }

    m.gains.assign(m.row_keys.size(), std::vector<double>(m.col_keys.size(),
                                                          std::numeric_limits<double>::quiet_NaN()));
    for (std::size_t ri = 0; ri < m.row_keys.size(); ++ri) {
        for (std::size_t ci = 0; ci < m.col_keys.size(); ++ci) {
            std::vector<double> accs;
            for (const auto& r : records) {
                if (transform_signature(r.transforms_used) == m.row_keys[ri] &&
                    r.resolved_config.value("algorithm", "") == m.col_keys[ci]) {
                    accs.push_back(r.mean_target_accuracy());
                }
            }
            if (accs.empty()) continue;
            double mean = std::accumulate(accs.begin(), accs.end(), 0.0) / accs.size();
            m.gains[ri][ci] = 100.0 * (mean - baseline_acc);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// equal-data protocol
// ---------------------------------------------------------------------------

EqualDataResult equal_data_protocol(const DomainDataset& ds, const std::string& source,
                                    const std::vector<std::string>& mdg_domains, int n,
                                    const ExperimentConfig& shared, const std::string& log_dir) {
    if (mdg_domains.size() != 3) throw ValidationError("equal_data_protocol needs exactly 3 mdg domains");
    std::set<std::string> uniq(mdg_domains.begin(), mdg_domains.end());
    if (uniq.size() != 3) throw ValidationError("mdg domains must be distinct");

    DomainDataset source_ds = ds.filter_domain(source);
    if (n > source_ds.size()) {
        throw ValidationError("insufficient data: source '" + source + "' has " +
                              std::to_string(source_ds.size()) + " < n=" + std::to_string(n));
    }
    // floor(n/3) per domain, remainders to the deterministically first domains
    std::vector<int> counts(3, n / 3);
    for (int i = 0; i < n % 3; ++i) counts[static_cast<std::size_t>(i)] += 1;
    for (std::size_t i = 0; i < 3; ++i) {
        auto dom = ds.filter_domain(mdg_domains[i]);
        if (counts[i] > dom.size()) {
            throw ValidationError("insufficient data: domain '" + mdg_domains[i] + "' has " +
                                  std::to_string(dom.size()) + " < " + std::to_string(counts[i]));
        }
    }

    EqualDataResult result;
    result.n = n;
    for (int trial = 0; trial < shared.trials; ++trial) {
        std::uint64_t seed = shared.train.seed + static_cast<std::uint64_t>(trial);

        // PMDG arm: n source samples + the shared transform set
        {
            DomainDataset arm = subsample(source_ds, n, seed);
            // non-source domains retained for evaluation
            for (const auto& d : ds.domains) {
                if (d == source) continue;
                for (const auto& ex : ds.examples) {
                    if (ex.domain == d) arm.examples.push_back(ex);
                }
            }
            arm.domains = ds.domains;
            ExperimentConfig cfg = shared;
            cfg.mode = TrainMode::pmdg;
            cfg.source = {source};
            cfg.trials = 1;
            cfg.train.seed = seed;
            auto groups = group_targets(cfg, shared.targets);
            for (const auto& g : groups) {
                RunRecord rec = run_single(cfg, arm, g, trial, log_dir);
                rec.sample_counts = {{source, n}};
                rec.trial = trial;
                result.pmdg_records.push_back(std::move(rec));
            }
        }

        // MDG arm: n/3-ish samples from each of the three domains
        {
            DomainDataset arm;
            arm.name = ds.name + ":equal-data";
            arm.domains = ds.domains;
            arm.class_names = ds.class_names;
            std::map<std::string, int> arm_counts;
            for (std::size_t i = 0; i < 3; ++i) {
                DomainDataset sub = subsample(ds.filter_domain(mdg_domains[i]), counts[i], seed);
                for (auto& ex : sub.examples) arm.examples.push_back(std::move(ex));
                arm_counts[mdg_domains[i]] = counts[i];
            }
            for (const auto& d : ds.domains) {
                if (std::find(mdg_domains.begin(), mdg_domains.end(), d) != mdg_domains.end()) continue;
                for (const auto& ex : ds.examples) {
                    if (ex.domain == d) arm.examples.push_back(ex);
                }
            }
            ExperimentConfig cfg = shared;
            cfg.mode = TrainMode::mdg;
            cfg.source = mdg_domains;
            cfg.trials = 1;
            cfg.train.seed = seed;
            TargetGroup group{shared.targets, {}};
            RunRecord rec = run_single(cfg, arm, group, trial, log_dir);
            rec.sample_counts = arm_counts;
            rec.trial = trial;
            result.mdg_records.push_back(std::move(rec));
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// correlation
// ---------------------------------------------------------------------------

double pearson_correlation(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw ValidationError("pearson_correlation requires two equal-length vectors of size >= 2");
    }
    double n = static_cast<double>(x.size());
    double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&v](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        double rank = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_correlation(const std::vector<double>& x, const std::vector<double>& y) {
    return pearson_correlation(average_ranks(x), average_ranks(y));
}

CorrelationReport correlation_report(const std::map<std::string, double>& mdg_accs,
                                     const std::map<std::string, double>& pmdg_accs) {
    if (mdg_accs.size() != pmdg_accs.size()) {
        throw ValidationError("correlation_report: algorithm key sets differ in size");
    }
    for (const auto& [k, v] : mdg_accs) {
        if (!pmdg_accs.count(k)) throw ValidationError("correlation_report: key missing in pmdg: " + k);
    }
    if (mdg_accs.size() < 3) throw ValidationError("correlation_report requires >= 3 algorithms");

    CorrelationReport rep;
    std::vector<double> x, y;
    for (const auto& [k, v] : mdg_accs) {
        rep.keys.push_back(k);
        x.push_back(v);
        y.push_back(pmdg_accs.at(k));
        rep.points.emplace_back(v, pmdg_accs.at(k));
    }
    rep.pearson = pearson_correlation(x, y);
    rep.spearman = spearman_correlation(x, y);
    return rep;
}

ReportKind report_kind_from_string(const std::string& s) {
    if (s == "table") return ReportKind::table;
    if (s == "gains") return ReportKind::gains;
    if (s == "equal_data") return ReportKind::equal_data;
    if (s == "correlation") return ReportKind::correlation;
    throw ValidationError("unknown report kind: " + s + " (expect table|gains|equal_data|correlation)");
}

}  // namespace pmdg
