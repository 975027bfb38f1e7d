#include "pmdg/trainer.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace pmdg {

using nlohmann::json;

std::string to_string(TrainMode m) { return m == TrainMode::pmdg ? "pmdg" : "mdg"; }

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "pmdg") return TrainMode::pmdg;
    if (s == "mdg") return TrainMode::mdg;
    throw ValidationError("unknown mode: " + s + " (expect pmdg|mdg)");
}

void TrainConfig::validate() const {
    if (epochs < 0) throw ValidationError("epochs must be >= 0");
    if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
    if (eval_every < 1) throw ValidationError("eval_every must be >= 1");
    if (!(holdout_fraction > 0.0) || !(holdout_fraction < 0.5)) {
        throw ValidationError("holdout_fraction must be in (0, 0.5)");
    }
    if (mode == TrainMode::pmdg) {
        if (source_domains.size() != 1) {
            throw ValidationError("pmdg mode requires exactly one source domain, got " +
                                  std::to_string(source_domains.size()));
        }
        if (transform_names.empty()) throw ValidationError("pmdg mode requires a non-empty transform set");
    } else {
        if (source_domains.size() < 2) {
            throw ValidationError("mdg mode requires >= 2 source domains, got " +
                                  std::to_string(source_domains.size()));
        }
    }
}

namespace {

double accuracy_on_batches(const std::function<Tensor(const Tensor&)>& predictor,
                           const std::vector<MiniBatch>& batches, PurityCounters* purity) {
    std::int64_t correct = 0, total = 0;
    for (const auto& mb : batches) {
        if (purity) {
            purity->eval_batches += 1;
            if (mb.augmented) purity->eval_augmented_batches += 1;
        }
        Tensor logits = predictor(mb.images);
        int b = logits.dim(0), c = logits.dim(1);
        for (int i = 0; i < b; ++i) {
            int arg = 0;
            for (int j = 1; j < c; ++j) {
                if (logits.at(i, j) > logits.at(i, arg)) arg = j;  // ties keep class 0 side
            }
            if (arg == mb.labels[static_cast<std::size_t>(i)]) ++correct;
            ++total;
        }
    }
    return total > 0 ? static_cast<double>(correct) / total : 0.0;
}

double pooled_val_accuracy(Model& model, const DomainDataset& val, const NormStats& norm,
                           PurityCounters* purity) {
    bool was_training = model.training();
    model.set_training(false);
    auto batches = eval_minibatches(val, 128, norm);
    double acc = accuracy_on_batches([&model](const Tensor& x) { return model.predict_logits(x); },
                                     batches, purity);
    model.set_training(was_training);
    return acc;
}

}  // namespace

std::map<std::string, double> evaluate(const std::function<Tensor(const Tensor&)>& predictor,
                                       const DomainDataset& ds,
                                       const std::vector<std::string>& domains,
                                       const NormStats& norm) {
    std::map<std::string, double> out;
    for (const auto& d : domains) {
        DomainDataset sub = ds.filter_domain(d);
        if (sub.examples.empty()) throw ValidationError("empty domain: " + d);
        out[d] = accuracy_on_batches(predictor, eval_minibatches(sub, 128, norm), nullptr);
    }
    return out;
}

std::map<std::string, double> evaluate(Model& model, const DomainDataset& ds,
                                       const std::vector<std::string>& domains,
                                       const NormStats& norm) {
    bool was_training = model.training();
    model.set_training(false);
    auto out = evaluate([&model](const Tensor& x) { return model.predict_logits(x); }, ds, domains, norm);
    model.set_training(was_training);
    return out;
}

Checkpoint select_checkpoint(const std::vector<TrainLogEvent>& log) {
    Checkpoint best;
    bool found = false;
    for (const auto& ev : log) {
        if (!ev.val_accuracy) continue;
        if (!found || *ev.val_accuracy > best.val_accuracy) {
            best.step = ev.step;
            best.val_accuracy = *ev.val_accuracy;
            found = true;
        }
    }
    if (!found) throw ValidationError("no evaluation events in log");
    return best;
}

TrainResult train(const TrainConfig& cfg, const DomainDataset& data) {
    cfg.validate();
    for (const auto& d : cfg.source_domains) {
        if (std::find(data.domains.begin(), data.domains.end(), d) == data.domains.end()) {
            throw ValidationError("source domain not in dataset: " + d);
        }
    }

    // keep only the configured source domains, in config order
    DomainDataset source;
    source.name = data.name;
    source.domains = cfg.source_domains;
    source.class_names = data.class_names;
    for (const auto& ex : data.examples) {
        if (std::find(cfg.source_domains.begin(), cfg.source_domains.end(), ex.domain) !=
            cfg.source_domains.end()) {
            source.examples.push_back(ex);
        }
    }
    if (source.examples.empty()) throw ValidationError("no examples in source domains");

    SplitPair split = split_in_domain(source, cfg.holdout_fraction, cfg.seed);

    ModelSpec spec = cfg.model_spec;
    spec.num_classes = data.num_classes();
    spec.image_size = source.examples.front().image.dim(1);
    Model model = build_model(spec, cfg.seed);
    model.set_training(true);
    auto algorithm = Algorithm::build(cfg.algorithm, std::move(model), cfg.hparams, cfg.seed);

    TrainResult result;
    result.train_domain_counts = split.train.domain_counts();

    int total_train = static_cast<int>(split.train.size());
    result.steps_per_epoch = total_train / cfg.batch_size;
    result.total_steps = cfg.epochs * result.steps_per_epoch;
    if (cfg.epochs > 0 && result.steps_per_epoch == 0) {
        throw ValidationError("training split smaller than batch_size");
    }

    MiniBatchOptions train_opts;
    train_opts.augment = true;
    train_opts.norm = cfg.norm;

    TransformSet set;
    if (cfg.mode == TrainMode::pmdg) set = make_transform_set(cfg.transform_names, cfg.seed);

    // per-domain streams for mdg mode
    std::vector<DomainDataset> domain_train;
    std::vector<std::vector<MiniBatch>> domain_queue;
    std::vector<int> domain_pass, domain_next;
    if (cfg.mode == TrainMode::mdg) {
        for (const auto& d : cfg.source_domains) {
            domain_train.push_back(split.train.filter_domain(d));
            domain_queue.emplace_back();
            domain_pass.push_back(0);
            domain_next.push_back(0);
        }
    }

    std::optional<Checkpoint> best;
    int step = 0;

    auto run_eval = [&](TrainLogEvent& ev) {
        std::int64_t calls_before = set.total_calls();
        double acc = pooled_val_accuracy(algorithm->model(), split.val, cfg.norm, &result.purity);
        result.purity.eval_transform_calls += set.total_calls() - calls_before;
        ev.val_accuracy = acc;
        if (!best || acc > best->val_accuracy) {
            best = Checkpoint{step, acc, algorithm->model().snapshot()};
        }
    };

    auto do_step = [&](const std::vector<MiniBatch>& batches) {
        LossReport rep = algorithm->update(batches);
        ++step;
        TrainLogEvent ev;
        ev.step = step;
        ev.task_loss = rep.task_loss;
        ev.penalty = rep.penalty;
        ev.total = rep.total;
        if (step % cfg.eval_every == 0 || step == result.total_steps) run_eval(ev);
        result.log.push_back(std::move(ev));
    };

    if (cfg.mode == TrainMode::pmdg) {
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            auto batches = make_minibatches(split.train, cfg.batch_size, cfg.seed, epoch, train_opts);
            for (const auto& batch : batches) {
                do_step(apply_set(set, batch));
            }
        }
    } else {
        auto next_batch = [&](std::size_t di) -> MiniBatch {
            if (domain_next[di] >= static_cast<int>(domain_queue[di].size())) {
                std::uint64_t dseed =
                    RngStream::derive(cfg.seed, "mdg-domain:" + cfg.source_domains[di]).state();
                domain_queue[di] =
                    make_minibatches(domain_train[di], cfg.batch_size, dseed, domain_pass[di], train_opts);
                domain_pass[di] += 1;
                domain_next[di] = 0;
            }
            return domain_queue[di][static_cast<std::size_t>(domain_next[di]++)];
        };
        for (int s = 0; s < result.total_steps; ++s) {
            std::vector<MiniBatch> batches;
            for (std::size_t di = 0; di < domain_train.size(); ++di) batches.push_back(next_batch(di));
            do_step(batches);
        }
    }

    result.transform_calls = set.total_calls() - result.purity.eval_transform_calls;
    if (best) {
        algorithm->model().restore(best->state);
        result.selected = best;
    }
    result.model = std::move(algorithm->model());
    result.model.set_training(false);
    return result;
}

void write_train_log_jsonl(const std::string& path, const std::vector<TrainLogEvent>& log) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write log: " + path);
    for (const auto& ev : log) {
        json j = {{"step", ev.step}, {"task_loss", ev.task_loss}, {"penalty", ev.penalty},
                  {"total", ev.total}};
        if (ev.val_accuracy) j["val_accuracy"] = *ev.val_accuracy;
        out << j.dump() << "\n";
    }
}

}  // namespace pmdg
