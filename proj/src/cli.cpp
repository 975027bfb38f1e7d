#include "pmdg/cli.hpp"

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "pmdg/harness.hpp"
#include "pmdg/image_io.hpp"
#include "pmdg/transforms.hpp"

namespace fs = std::filesystem;

namespace pmdg {

using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config file: " + path);
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw ValidationError("config parse error in " + path + ": " + e.what());
    }
}

struct CommonOpts {
    std::string config_path;
    std::string records_path;
    std::string out_dir = "out";
    std::vector<std::string> overrides;
    std::int64_t seed = -1;
    int trials = 0;
    int jobs = 1;
    bool json_errors = false;
    bool overwrite = false;
};

json resolve_config(const CommonOpts& opts) {
    json cfg = load_json_file(opts.config_path);
    for (const auto& ov : opts.overrides) apply_override(cfg, ov);
    return cfg;
}

void apply_cli_knobs(ExperimentConfig& cfg, const CommonOpts& opts) {
    if (opts.seed >= 0) cfg.train.seed = static_cast<std::uint64_t>(opts.seed);
    if (opts.trials > 0) cfg.trials = opts.trials;
}

int cmd_gen_data(const CommonOpts& opts) {
    json j = resolve_config(opts);
    DatasetConfig dc = DatasetConfig::from_json(j);
    if (opts.seed >= 0 && dc.type == DatasetConfig::Type::synthetic) {
        dc.synthetic.seed = static_cast<std::uint64_t>(opts.seed);
    }
    DomainDataset ds = dc.load();
    write_image_folder(opts.out_dir, ds);
    std::cout << "wrote " << ds.size() << " images (" << ds.domains.size() << " domains, "
              << ds.num_classes() << " classes) to " << opts.out_dir << "\n";
    return 0;
}

int cmd_run(const CommonOpts& opts) {
    ExperimentConfig cfg = ExperimentConfig::from_json(resolve_config(opts));
    apply_cli_knobs(cfg, opts);
    std::string records = opts.records_path.empty()
                              ? (fs::path(opts.out_dir) / "records.jsonl").string()
                              : opts.records_path;
    auto recs = run_experiment(cfg, (fs::path(opts.out_dir) / "logs").string());
    append_records_jsonl(records, recs, opts.overwrite);
    for (const auto& r : recs) {
        std::cout << "trial " << r.trial << " [" << transform_signature(r.transforms_used) << "] ";
        for (const auto& [t, a] : r.target_accuracy) std::cout << t << "=" << a << " ";
        std::cout << "(val " << r.val_accuracy << ", " << r.wall_time_sec << "s)\n";
    }
    std::cout << "records -> " << records << "\n";
    return 0;
}

int cmd_sweep(const CommonOpts& opts) {
    json grid = resolve_config(opts);
    if (!grid.contains("base")) throw ValidationError("sweep config needs a 'base' experiment config");
    json axes = grid.value("axes", json::object());
    for (const auto& [k, v] : axes.items()) {
        if (k != "algorithm" && k != "transforms" && k != "mode" && k != "source") {
            throw ValidationError("unknown sweep axis: " + k +
                                  " (expect algorithm|transforms|mode|source)");
        }
    }

    // cartesian product over the provided axes
    std::vector<json> cells = {grid.at("base")};
    auto expand = [&cells](const std::string& key, const json& values) {
        std::vector<json> next;
        for (const auto& cell : cells) {
            for (const auto& v : values) {
                json c = cell;
                c[key] = v;
                next.push_back(std::move(c));
            }
        }
        cells = std::move(next);
    };
    if (axes.contains("algorithm")) expand("algorithm", axes["algorithm"]);
    if (axes.contains("transforms")) expand("transforms", axes["transforms"]);
    if (axes.contains("mode")) expand("mode", axes["mode"]);
    if (axes.contains("source")) expand("source", axes["source"]);

    std::vector<ExperimentConfig> configs;
    for (const auto& c : cells) {
        ExperimentConfig cfg = ExperimentConfig::from_json(c);
        apply_cli_knobs(cfg, opts);
        configs.push_back(std::move(cfg));
    }

    std::string log_dir = (fs::path(opts.out_dir) / "logs").string();
    std::vector<std::vector<RunRecord>> results(configs.size());
    std::vector<std::string> errors(configs.size());
    std::atomic<std::size_t> next{0};
    int jobs = std::max(1, opts.jobs);
    auto worker = [&]() {
        for (;;) {
            std::size_t i = next.fetch_add(1);
            if (i >= configs.size()) return;
            try {
                results[i] = run_experiment(configs[i], log_dir);
            } catch (const std::exception& e) {
                errors[i] = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < std::min<int>(jobs, static_cast<int>(configs.size())); ++t) {
        pool.emplace_back(worker);
    }
    for (auto& t : pool) t.join();

    for (std::size_t i = 0; i < configs.size(); ++i) {
        if (!errors[i].empty()) {
            throw std::runtime_error("sweep cell " + std::to_string(i) + " failed: " + errors[i]);
        }
    }

    std::string records = opts.records_path.empty()
                              ? (fs::path(opts.out_dir) / "records.jsonl").string()
                              : opts.records_path;
    // single writer, deterministic cell order
    for (auto& recs : results) append_records_jsonl(records, recs, opts.overwrite);
    std::size_t total = 0;
    for (const auto& r : results) total += r.size();
    std::cout << "sweep: " << configs.size() << " cells, " << total << " records -> " << records << "\n";
    return 0;
}

int cmd_report(const std::string& kind_str, const CommonOpts& opts) {
    if (opts.records_path.empty()) throw ValidationError("report requires --records");
    ReportKind kind = report_kind_from_string(kind_str);
    auto records = read_records_jsonl(opts.records_path);
    auto files = render_report(kind, records, opts.out_dir);
    for (const auto& f : files) std::cout << "wrote " << f << "\n";
    return 0;
}

int cmd_preview(const std::string& dataset_path, const CommonOpts& opts) {
    json j = load_json_file(dataset_path);
    for (const auto& ov : opts.overrides) apply_override(j, ov);
    DatasetConfig dc = DatasetConfig::from_json(j);
    DomainDataset ds = dc.load();
    std::uint64_t seed = opts.seed >= 0 ? static_cast<std::uint64_t>(opts.seed) : 0;

    int n = static_cast<int>(std::min<std::int64_t>(6, ds.size()));
    if (n < 2) throw ValidationError("preview needs at least 2 examples");
    DomainDataset head = ds;
    head.examples.assign(ds.examples.begin(), ds.examples.begin() + n);
    auto batches = eval_minibatches(head, n);
    const MiniBatch& batch = batches.front();
    int h = batch.images.dim(2), w = batch.images.dim(3);

    fs::create_directories(opts.out_dir);
    for (const auto& name : registered_transform_names()) {
        TransformSet set = make_transform_set({name}, seed);
        MiniBatch out = apply_set(set, batch).front();
        Tensor before = batch.denormalized_images();
        Tensor after = out.denormalized_images();
        // grid: top row originals, bottom row transformed
        int pad = 2;
        Tensor grid = Tensor::full({3, 2 * (h + pad) + pad, n * (w + pad) + pad}, 1.0);
        for (int i = 0; i < n; ++i) {
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        grid.at(c, pad + y, pad + i * (w + pad) + x) =
                            std::clamp(before.at(i, c, y, x), 0.0, 1.0);
                        grid.at(c, 2 * pad + h + y, pad + i * (w + pad) + x) =
                            std::clamp(after.at(i, c, y, x), 0.0, 1.0);
                    }
                }
            }
        }
        std::string path = (fs::path(opts.out_dir) / ("preview_" + name + ".png")).string();
        write_png(path, grid);
        std::cout << "wrote " << path << "\n";
    }
    return 0;
}

void report_error(const CommonOpts& opts, const std::string& type, const std::string& what) {
    if (opts.json_errors) {
        json e = {{"error", what}, {"type", type}};
        std::cerr << e.dump() << "\n";
    } else {
        std::cerr << "error (" << type << "): " << what << "\n";
    }
}

}  // namespace

void apply_override(json& config, const std::string& assignment) {
    auto eq = assignment.find('=');
    if (eq == std::string::npos) {
        throw ValidationError("override must be key=value, got: " + assignment);
    }
    std::string path = assignment.substr(0, eq);
    std::string value = assignment.substr(eq + 1);

    std::vector<std::string> keys;
    std::stringstream ss(path);
    std::string part;
    while (std::getline(ss, part, '.')) keys.push_back(part);
    if (keys.empty()) throw ValidationError("override has empty key: " + assignment);

    json* node = &config;
    for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
        if (!node->is_object() || !node->contains(keys[i])) {
            throw ValidationError("override path not found in config: " + path + " (at '" + keys[i] +
                                  "')");
        }
        node = &(*node)[keys[i]];
    }
    if (!node->is_object() || !node->contains(keys.back())) {
        throw ValidationError("override path not found in config: " + path + " (at '" + keys.back() +
                              "')");
    }
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const json::parse_error&) {
        parsed = value;  // plain string
    }
    (*node)[keys.back()] = parsed;
}

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"PMDG: pseudo multi-source domain generalization harness"};
    app.require_subcommand(1);

    CommonOpts opts;
    std::string report_kind;
    std::string dataset_path;

    auto add_common = [&opts](CLI::App* sub, bool with_config) {
        if (with_config) sub->add_option("--config", opts.config_path, "config file (JSON)")->required();
        sub->add_option("--seed", opts.seed, "base seed override");
        sub->add_option("--out", opts.out_dir, "output directory");
        sub->add_option("--trials", opts.trials, "trial count override");
        sub->add_option("--override", opts.overrides, "dotted-key config override, repeatable");
        sub->add_option("--records", opts.records_path, "records JSONL path");
        sub->add_option("--jobs", opts.jobs, "parallel cells (sweep)");
        sub->add_flag("--json-errors", opts.json_errors, "machine-readable errors");
        sub->add_flag("--overwrite", opts.overwrite, "overwrite matching records instead of skipping");
    };

    CLI::App* gen = app.add_subcommand("gen-data", "materialize a synthetic dataset as an image folder");
    add_common(gen, true);
    CLI::App* run = app.add_subcommand("run", "run one experiment config");
    add_common(run, true);
    CLI::App* sweep = app.add_subcommand("sweep", "run a grid of experiment configs");
    add_common(sweep, true);
    CLI::App* report = app.add_subcommand("report", "render a report from records");
    report->add_option("kind", report_kind, "table|gains|equal_data|correlation")->required();
    add_common(report, false);
    CLI::App* preview = app.add_subcommand("preview-transforms", "write before/after grids per transform");
    preview->add_option("--dataset", dataset_path, "dataset config file (JSON)")->required();
    add_common(preview, false);

    std::vector<char*> argv;
    std::vector<std::string> storage = args;
    storage.insert(storage.begin(), "pmdg");
    argv.reserve(storage.size());
    for (auto& s : storage) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 1;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(opts);
        if (run->parsed()) return cmd_run(opts);
        if (sweep->parsed()) return cmd_sweep(opts);
        if (report->parsed()) return cmd_report(report_kind, opts);
        if (preview->parsed()) return cmd_preview(dataset_path, opts);
        std::cerr << app.help();
        return 1;
    } catch (const ValidationError& e) {
        report_error(opts, "validation", e.what());
        return 1;
    } catch (const std::exception& e) {
        report_error(opts, "runtime", e.what());
        return 2;
    }
}

}  // namespace pmdg
