#include "pmdg/models.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "pmdg/dataset.hpp"
#include "pmdg/rng.hpp"

namespace pmdg {

using nlohmann::json;

void ModelSpec::validate() const {
    if (feature_dim < 2) throw ValidationError("feature_dim must be >= 2, got " + std::to_string(feature_dim));
    if (num_classes < 2) throw ValidationError("num_classes must be >= 2, got " + std::to_string(num_classes));
    for (int w : widths) {
        if (w < 1) throw ValidationError("widths entries must be >= 1");
    }
    if (kind == ModelKind::mlp && image_size < 1) {
        throw ValidationError("image_size must be >= 1 for mlp models");
    }
    if (kind == ModelKind::small_cnn) {
        // each block halves the spatial size; the final map must be non-empty
        int size = image_size;
        for (std::size_t i = 0; i < widths.size() + 1; ++i) size /= 2;
        if (image_size > 0 && size < 1) {
            throw ValidationError("image_size too small for " + std::to_string(widths.size() + 1) +
                                  " conv blocks");
        }
    }
}

std::string to_string(ModelKind k) { return k == ModelKind::small_cnn ? "small_cnn" : "mlp"; }
std::string to_string(NormKind n) { return n == NormKind::batch ? "batch" : "none"; }

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "small_cnn") return ModelKind::small_cnn;
    if (s == "mlp") return ModelKind::mlp;
    throw ValidationError("unknown model kind: " + s);
}

NormKind norm_kind_from_string(const std::string& s) {
    if (s == "batch") return NormKind::batch;
    if (s == "none") return NormKind::none;
    throw ValidationError("unknown norm kind: " + s);
}

namespace {

Tensor fan_in_uniform(std::vector<int> shape, int fan_in, RngStream& rng) {
    Tensor t(std::move(shape));
    double bound = std::sqrt(1.0 / std::max(1, fan_in));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

}  // namespace

Model build_model(const ModelSpec& spec, std::uint64_t seed) {
    spec.validate();
    RngStream rng = RngStream::derive(seed, "model-init");
    Model m;
    m.spec_ = spec;

    auto add_param = [&m](const std::string& name, Tensor t) {
        ad::Value v = ad::leaf(std::move(t));
        m.params_.emplace_back(name, v);
        return v;
    };
    auto make_bn = [&](Model::BnState& bn, const std::string& prefix, int channels) {
        bn.active = spec.norm == NormKind::batch;
        bn.channels = channels;
        if (!bn.active) return;
        bn.gamma = add_param(prefix + ".gamma", Tensor::full({channels}, 1.0));
        bn.beta = add_param(prefix + ".beta", Tensor::zeros({channels}));
        bn.running_mean = Tensor::zeros({channels});
        bn.running_var = Tensor::full({channels}, 1.0);
    };

    if (spec.kind == ModelKind::small_cnn) {
        std::vector<int> channels = spec.widths;
        channels.push_back(spec.feature_dim);
        int in_c = 3;
        for (std::size_t i = 0; i < channels.size(); ++i) {
            Model::Layer layer;
            layer.is_conv = true;
            layer.out_dim = channels[i];
            std::string prefix = "block" + std::to_string(i);
            int fan_in = in_c * 3 * 3;
            layer.w = add_param(prefix + ".conv.w", fan_in_uniform({channels[i], in_c, 3, 3}, fan_in, rng));
            layer.b = add_param(prefix + ".conv.b", Tensor::zeros({channels[i]}));
            make_bn(layer.bn, prefix + ".bn", channels[i]);
            m.layers_.push_back(std::move(layer));
            in_c = channels[i];
        }
        m.feature_dim_ = spec.feature_dim;
    } else {
        int in_dim = 3 * spec.image_size * spec.image_size;
        for (std::size_t i = 0; i < spec.widths.size(); ++i) {
            Model::Layer layer;
            layer.is_conv = false;
            layer.out_dim = spec.widths[i];
            std::string prefix = "fc" + std::to_string(i);
            layer.w = add_param(prefix + ".w", fan_in_uniform({in_dim, spec.widths[i]}, in_dim, rng));
            layer.b = add_param(prefix + ".b", Tensor::zeros({spec.widths[i]}));
            make_bn(layer.bn, prefix + ".bn", spec.widths[i]);
            m.layers_.push_back(std::move(layer));
            in_dim = spec.widths[i];
        }
        m.feature_dim_ = in_dim;  // widths [] -> identity-flatten featurizer
    }

    m.head_w_ = add_param("head.w", fan_in_uniform({m.feature_dim_, spec.num_classes}, m.feature_dim_, rng));
    m.head_b_ = add_param("head.b", Tensor::zeros({spec.num_classes}));
    return m;
}

ad::Value Model::apply_bn(BnState& bn, const ad::Value& x) {
    if (!bn.active) return x;
    if (training_) {
        Tensor batch_mean, batch_var;
        ad::Value out = ad::batchnorm_train(x, bn.gamma, bn.beta, bn.channels, kBnEps, &batch_mean,
                                            &batch_var);
        if (bn_update_) {
            std::int64_t count = x.get()->value.size() / bn.channels;
            double unbias = count > 1 ? static_cast<double>(count) / (count - 1) : 1.0;
            for (int c = 0; c < bn.channels; ++c) {
                bn.running_mean[c] = (1.0 - kBnMomentum) * bn.running_mean[c] + kBnMomentum * batch_mean[c];
                bn.running_var[c] =
                    (1.0 - kBnMomentum) * bn.running_var[c] + kBnMomentum * batch_var[c] * unbias;
            }
        }
        return out;
    }
    return ad::batchnorm_eval(x, bn.gamma, bn.beta, bn.channels, kBnEps, bn.running_mean,
                              bn.running_var);
}

ad::Value Model::featurize(const ad::Value& images) {
    const Tensor& x = images->value;
    if (spec_.kind == ModelKind::small_cnn) {
        if (x.ndim() != 4 || x.dim(1) != 3) {
            throw ValidationError("featurize expects [b,3,h,w] input, got " + x.shape_str());
        }
        ad::Value cur = images;
        for (auto& layer : layers_) {
            cur = ad::conv2d(cur, layer.w, layer.b, 1);
            cur = apply_bn(layer.bn, cur);
            cur = ad::relu(cur);
            cur = ad::avg_pool2x2(cur);
        }
        return ad::global_avg_pool(cur);
    }
    // mlp: flatten then linear stack
    int b = x.dim(0);
    std::int64_t flat = x.size() / b;
    ad::Value cur = ad::reshape(images, {b, static_cast<int>(flat)});
    for (auto& layer : layers_) {
        cur = ad::add_rowvec(ad::matmul(cur, layer.w), layer.b);
        cur = apply_bn(layer.bn, cur);
        cur = ad::relu(cur);
    }
    return cur;
}

ad::Value Model::classify(const ad::Value& features) {
    return ad::add_rowvec(ad::matmul(features, head_w_), head_b_);
}

ad::Value Model::predict(const ad::Value& images) { return classify(featurize(images)); }

Tensor Model::predict_logits(const Tensor& images) {
    return predict(ad::constant(images))->value;
}

Tensor Model::featurize_values(const Tensor& images) {
    return featurize(ad::constant(images))->value;
}

std::int64_t Model::parameter_count() const {
    std::int64_t n = 0;
    for (const auto& [name, p] : params_) n += p->value.size();
    return n;
}

void Model::zero_grad() {
    for (auto& [name, p] : params_) p->grad = Tensor();
}

std::vector<std::pair<std::string, Tensor>> Model::state() const {
    std::vector<std::pair<std::string, Tensor>> st;
    for (const auto& [name, p] : params_) st.emplace_back(name, p->value);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const auto& bn = layers_[i].bn;
        if (!bn.active) continue;
        std::string prefix = (layers_[i].is_conv ? "block" : "fc") + std::to_string(i) + ".bn";
        st.emplace_back(prefix + ".running_mean", bn.running_mean);
        st.emplace_back(prefix + ".running_var", bn.running_var);
    }
    return st;
}

void Model::load_state(const std::vector<std::pair<std::string, Tensor>>& state) {
    auto find = [&state](const std::string& name) -> const Tensor& {
        for (const auto& [n, t] : state) {
            if (n == name) return t;
        }
        throw ValidationError("checkpoint missing tensor: " + name);
    };
    for (auto& [name, p] : params_) {
        const Tensor& t = find(name);
        if (t.shape() != p->value.shape()) throw ValidationError("checkpoint shape mismatch for " + name);
        p->value = t;
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        auto& bn = layers_[i].bn;
        if (!bn.active) continue;
        std::string prefix = (layers_[i].is_conv ? "block" : "fc") + std::to_string(i) + ".bn";
        bn.running_mean = find(prefix + ".running_mean");
        bn.running_var = find(prefix + ".running_var");
    }
}

std::vector<Tensor> Model::snapshot() const {
    std::vector<Tensor> snap;
    for (const auto& [name, t] : state()) snap.push_back(t);
    return snap;
}

void Model::restore(const std::vector<Tensor>& snap) {
    auto st = state();
    if (snap.size() != st.size()) throw ValidationError("snapshot size mismatch");
    std::size_t i = 0;
    for (auto& [name, p] : params_) p->value = snap[i++];
    for (auto& layer : layers_) {
        if (!layer.bn.active) continue;
        layer.bn.running_mean = snap[i++];
        layer.bn.running_var = snap[i++];
    }
}

Model Model::clone() const {
    Model m = build_model(spec_, 0);
    m.load_state(state());
    m.training_ = training_;
    m.bn_update_ = bn_update_;
    return m;
}

// ---------------------------------------------------------------------------
// checkpoint io: magic, version, json header, raw float64 payload
// ---------------------------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'P', 'M', 'D', 'G', 'M', 'O', 'D', 'L'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

void Model::save(const std::string& path) const {
    auto st = state();
    json header;
    header["spec"] = {{"kind", to_string(spec_.kind)},
                      {"feature_dim", spec_.feature_dim},
                      {"widths", spec_.widths},
                      {"num_classes", spec_.num_classes},
                      {"norm", to_string(spec_.norm)},
                      {"image_size", spec_.image_size}};
    json tensors = json::array();
    for (const auto& [name, t] : st) tensors.push_back({{"name", name}, {"shape", t.shape()}});
    header["tensors"] = tensors;
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    std::uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    std::uint64_t hlen = hs.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : st) {
        out.write(reinterpret_cast<const char*>(t.data()),
                  static_cast<std::streamsize>(t.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

Model Model::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw std::runtime_error("not a model checkpoint: " + path);
    }
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kVersion) {
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    }
    std::uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    json header = json::parse(hs);

    ModelSpec spec;
    spec.kind = model_kind_from_string(header["spec"]["kind"].get<std::string>());
    spec.feature_dim = header["spec"]["feature_dim"].get<int>();
    spec.widths = header["spec"]["widths"].get<std::vector<int>>();
    spec.num_classes = header["spec"]["num_classes"].get<int>();
    spec.norm = norm_kind_from_string(header["spec"]["norm"].get<std::string>());
    spec.image_size = header["spec"]["image_size"].get<int>();

    std::vector<std::pair<std::string, Tensor>> st;
    for (const auto& entry : header["tensors"]) {
        std::vector<int> shape = entry["shape"].get<std::vector<int>>();
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.size() * sizeof(double)));
        st.emplace_back(entry["name"].get<std::string>(), std::move(t));
    }
    if (!in) throw std::runtime_error("truncated checkpoint: " + path);

    Model m = build_model(spec, 0);
    m.load_state(st);
    return m;
}

Tensor softmax_rows(const Tensor& logits) {
    int n = logits.dim(0), c = logits.dim(1);
    Tensor out({n, c});
    for (int i = 0; i < n; ++i) {
        double mx = logits.at(i, 0);
        for (int j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += std::exp(logits.at(i, j) - mx);
        for (int j = 0; j < c; ++j) out.at(i, j) = std::exp(logits.at(i, j) - mx) / s;
    }
    return out;
}

}  // namespace pmdg
