#include "pmdg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include "pmdg/image_io.hpp"
#include "pmdg/rng.hpp"

namespace fs = std::filesystem;

namespace pmdg {

std::vector<int> DomainDataset::domain_indices(const std::string& domain) const {
    std::vector<int> idx;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        if (examples[i].domain == domain) idx.push_back(static_cast<int>(i));
    }
    return idx;
}

DomainDataset DomainDataset::filter_domain(const std::string& domain) const {
    DomainDataset out;
    out.name = name + ":" + domain;
    out.domains = {domain};
    out.class_names = class_names;
    for (const auto& ex : examples) {
        if (ex.domain == domain) out.examples.push_back(ex);
    }
    return out;
}

std::map<std::string, int> DomainDataset::domain_counts() const {
    std::map<std::string, int> counts;
    for (const auto& d : domains) counts[d] = 0;
    for (const auto& ex : examples) counts[ex.domain] += 1;
    return counts;
}

void DomainDataset::validate() const {
    std::set<std::string> known(domains.begin(), domains.end());
    for (const auto& ex : examples) {
        if (ex.domain.empty()) throw ValidationError("example domain must be non-empty");
        if (!known.count(ex.domain)) throw ValidationError("example domain not listed: " + ex.domain);
        if (ex.label < 0 || ex.label >= num_classes()) {
            throw ValidationError("example label out of range: " + std::to_string(ex.label));
        }
        if (!ex.image.all_finite()) throw ValidationError("example image contains non-finite values");
    }
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

const std::vector<std::string>& synthetic_shape_names() {
    // ordered so small num_classes picks maximally distinct silhouettes
    static const std::vector<std::string> names = {"hbar", "vbar", "disk", "cross",  "square",
                                                   "plus", "triangle", "ring", "diamond", "checker"};
    return names;
}

void SyntheticShiftSpec::validate() const {
    if (num_classes < 2 || num_classes > 10) {
        throw ValidationError("num_classes must be in [2,10], got " + std::to_string(num_classes));
    }
    if (image_size < 16) {
        throw ValidationError("image_size must be >= 16, got " + std::to_string(image_size));
    }
    if (samples_per_domain < 1) {
        throw ValidationError("samples_per_domain must be >= 1, got " +
                              std::to_string(samples_per_domain));
    }
    if (domains.empty()) throw ValidationError("domains must be non-empty");
    std::set<std::string> seen;
    for (const auto& d : domains) {
        if (d.name.empty()) throw ValidationError("domains[].name must be non-empty");
        if (!seen.insert(d.name).second) throw ValidationError("duplicate domain name: " + d.name);
        if (d.color_class_correlation < 0.0 || d.color_class_correlation > 1.0) {
            throw ValidationError("color_class_correlation must be in [0,1] for domain " + d.name);
        }
        if (static_cast<int>(d.hue_palette.size()) < num_classes) {
            throw ValidationError("hue_palette must have at least num_classes entries for domain " +
                                  d.name);
        }
        if (d.rotation_range < 0.0) {
            throw ValidationError("rotation_range must be >= 0 for domain " + d.name);
        }
    }
}

namespace {

void hue_to_rgb(double hue_deg, double& r, double& g, double& b) {
    // HSV with s=0.85, v=0.9
    double h = std::fmod(std::fmod(hue_deg, 360.0) + 360.0, 360.0) / 60.0;
    double s = 0.85, v = 0.9;
    int i = static_cast<int>(h) % 6;
    double f = h - std::floor(h);
    double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
    switch (i) {
        case 0: r = v; g = t; b = p; break;
        case 1: r = q; g = v; b = p; break;
        case 2: r = p; g = v; b = t; break;
        case 3: r = p; g = q; b = v; break;
        case 4: r = t; g = p; b = v; break;
        default: r = v; g = p; b = q; break;
    }
}

bool shape_contains(int shape, double u, double v) {
    double au = std::abs(u), av = std::abs(v);
    switch (shape) {
        case 0: return av <= 0.4 && au <= 0.95;                      // hbar
        case 1: return au <= 0.4 && av <= 0.95;                      // vbar
        case 2: return u * u + v * v <= 1.0;                         // disk
        case 3: return (std::abs(u - v) <= 0.4 || std::abs(u + v) <= 0.4) && au <= 1.0 && av <= 1.0;  // cross (X)
        case 4: return au <= 1.0 && av <= 1.0;                       // square
        case 5: return (au <= 0.34 && av <= 1.0) || (av <= 0.34 && au <= 1.0);  // plus
        case 6: return v >= -1.0 && v <= 1.0 && au <= (1.0 - v) / 2.0;  // triangle (apex up)
        case 7: {                                                    // ring
            double r2 = u * u + v * v;
            return r2 <= 1.0 && r2 >= 0.3;
        }
        case 8: return au + av <= 1.0;                               // diamond
        case 9: {                                                    // checker
            if (au > 1.0 || av > 1.0) return false;
            int cu = static_cast<int>(std::floor((u + 1.0)));
            int cv = static_cast<int>(std::floor((v + 1.0)));
            return (cu + cv) % 2 == 0;
        }
        default: return false;
    }
}

Tensor render_example(int shape, double hue, const DomainShift& shift, int size, RngStream& rng) {
    Tensor img({3, size, size});

    // background
    switch (shift.background) {
        case Background::flat:
            img.fill(0.45);
            break;
        case Background::noise:
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    double v = 0.3 + 0.3 * rng.uniform();
                    for (int c = 0; c < 3; ++c) img.at(c, y, x) = v;
                }
            }
            break;
        case Background::stripes: {
            int stripe = std::max(2, size / 8);
            for (int y = 0; y < size; ++y) {
                for (int x = 0; x < size; ++x) {
                    double v = ((x + y) / stripe) % 2 == 0 ? 0.35 : 0.55;
                    for (int c = 0; c < 3; ++c) img.at(c, y, x) = v;
                }
            }
            break;
        }
    }

    double fr, fg, fb;
    hue_to_rgb(hue, fr, fg, fb);

    double theta = shift.rotation_range > 0.0
                       ? rng.uniform(-shift.rotation_range, shift.rotation_range) * M_PI / 180.0
                       : 0.0;
    double ct = std::cos(theta), st = std::sin(theta);
    double radius = size * rng.uniform(0.28, 0.38);
    double cx = size * 0.5 + size * rng.uniform(-0.08, 0.08);
    double cy = size * 0.5 + size * rng.uniform(-0.08, 0.08);
    // anisotropic wobble: per-example aspect variety spreads shape difficulty
    double su = rng.uniform(0.8, 1.25);
    double sv = rng.uniform(0.8, 1.25);

    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double dx = (x + 0.5 - cx) / radius;
            double dy = (y + 0.5 - cy) / radius;
            double u = (ct * dx + st * dy) / su;
            double v = (-st * dx + ct * dy) / sv;
            if (shape_contains(shape, u, v)) {
                img.at(0, y, x) = fr;
                img.at(1, y, x) = fg;
                img.at(2, y, x) = fb;
            }
        }
    }
    return img;
}

}  // namespace

DomainDataset generate_synthetic(const SyntheticShiftSpec& spec) {
    spec.validate();
    DomainDataset ds;
    ds.name = spec.name;
    const auto& shapes = synthetic_shape_names();
    ds.class_names.assign(shapes.begin(), shapes.begin() + spec.num_classes);

    for (std::size_t di = 0; di < spec.domains.size(); ++di) {
        const DomainShift& shift = spec.domains[di];
        ds.domains.push_back(shift.name);
        RngStream rng = RngStream::derive(spec.seed, "synthetic:" + shift.name, di);

        int m = spec.samples_per_domain;
        // exact agreement count: round(rho * m) examples get color == label
        int agree_count = static_cast<int>(std::lround(shift.color_class_correlation * m));
        std::vector<char> agree(static_cast<std::size_t>(m), 0);
        for (int i = 0; i < agree_count; ++i) agree[static_cast<std::size_t>(i)] = 1;
        rng.shuffle(agree);

        int palette = static_cast<int>(shift.hue_palette.size());
        for (int i = 0; i < m; ++i) {
            int label = i % spec.num_classes;
            int color_idx;
            if (agree[static_cast<std::size_t>(i)]) {
                color_idx = label;
            } else {
                color_idx = rng.uniform_int(palette - 1);
                if (color_idx >= label) ++color_idx;  // uniform over the other entries
            }
            LabeledExample ex;
            ex.label = label;
            ex.domain = shift.name;
            ex.image = render_example(label, shift.hue_palette[static_cast<std::size_t>(color_idx)],
                                      shift, spec.image_size, rng);
            ds.examples.push_back(std::move(ex));
        }
    }
    return ds;
}

// ---------------------------------------------------------------------------
// folder loading / writing
// ---------------------------------------------------------------------------

namespace {

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<std::string> sorted_subdirs(const fs::path& root) {
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory()) names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    return names;
}

}  // namespace

DomainDataset load_image_folder(const std::string& root, int image_size) {
    fs::path rootp(root);
    if (!fs::exists(rootp) || !fs::is_directory(rootp)) {
        throw ValidationError("dataset root does not exist: " + root);
    }
    auto domain_names = sorted_subdirs(rootp);
    if (domain_names.empty()) throw ValidationError("no domains found under " + root);

    // classes = sorted union over domains
    std::set<std::string> class_set;
    std::vector<std::string> empty_dirs;
    for (const auto& d : domain_names) {
        auto classes = sorted_subdirs(rootp / d);
        if (classes.empty()) empty_dirs.push_back(d);
        for (const auto& c : classes) class_set.insert(c);
    }
    if (!empty_dirs.empty()) {
        std::ostringstream os;
        os << "empty domain directories:";
        for (const auto& d : empty_dirs) os << " " << d;
        throw ValidationError(os.str());
    }

    DomainDataset ds;
    ds.name = rootp.filename().string();
    ds.domains = domain_names;
    ds.class_names.assign(class_set.begin(), class_set.end());

    std::vector<std::string> empty_classes;
    for (const auto& d : domain_names) {
        for (const auto& c : sorted_subdirs(rootp / d)) {
            int label = static_cast<int>(
                std::distance(ds.class_names.begin(),
                              std::find(ds.class_names.begin(), ds.class_names.end(), c)));
            std::vector<std::string> files;
            for (const auto& entry : fs::directory_iterator(rootp / d / c)) {
                if (entry.is_regular_file() && is_image_file(entry.path())) {
                    files.push_back(entry.path().string());
                }
            }
            std::sort(files.begin(), files.end());
            if (files.empty()) {
                empty_classes.push_back(d + "/" + c);
                continue;
            }
            for (const auto& f : files) {
                LabeledExample ex;
                ex.image = resize_bilinear(read_image(f), image_size, image_size);
                ex.label = label;
                ex.domain = d;
                ds.examples.push_back(std::move(ex));
            }
        }
    }
    if (!empty_classes.empty()) {
        std::ostringstream os;
        os << "empty class directories:";
        for (const auto& c : empty_classes) os << " " << c;
        throw ValidationError(os.str());
    }
    return ds;
}

void write_image_folder(const std::string& root, const DomainDataset& ds) {
    fs::create_directories(root);
    std::map<std::string, int> counters;
    for (const auto& ex : ds.examples) {
        const std::string& cls = ds.class_names[static_cast<std::size_t>(ex.label)];
        fs::path dir = fs::path(root) / ex.domain / cls;
        fs::create_directories(dir);
        int n = counters[ex.domain + "/" + cls]++;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%06d.png", n);
        write_png((dir / buf).string(), ex.image);
    }
}

// ---------------------------------------------------------------------------
// splits / subsampling
// ---------------------------------------------------------------------------

SplitPair split_in_domain(const DomainDataset& ds, double holdout_fraction, std::uint64_t seed) {
    if (!(holdout_fraction > 0.0) || !(holdout_fraction < 0.5)) {
        throw ValidationError("holdout_fraction must be in (0, 0.5), got " +
                              std::to_string(holdout_fraction));
    }
    std::vector<char> in_val(ds.examples.size(), 0);
    for (const auto& domain : ds.domains) {
        for (int cls = 0; cls < ds.num_classes(); ++cls) {
            std::vector<int> idx;
            for (std::size_t i = 0; i < ds.examples.size(); ++i) {
                if (ds.examples[i].domain == domain && ds.examples[i].label == cls) {
                    idx.push_back(static_cast<int>(i));
                }
            }
            if (idx.empty()) continue;
            if (idx.size() < 2) {
                throw ValidationError("class '" + ds.class_names[static_cast<std::size_t>(cls)] +
                                      "' has fewer than 2 examples in domain '" + domain + "'");
            }
            RngStream rng = RngStream::derive(seed, "split:" + domain, static_cast<std::uint64_t>(cls));
            rng.shuffle(idx);
            int count = static_cast<int>(idx.size());
            int n_val = static_cast<int>(std::lround(holdout_fraction * count));
            n_val = std::max(1, std::min(n_val, count - 1));
            for (int i = 0; i < n_val; ++i) in_val[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1;
        }
    }
    SplitPair pair;
    pair.train.name = ds.name + ":train";
    pair.val.name = ds.name + ":val";
    pair.train.domains = pair.val.domains = ds.domains;
    pair.train.class_names = pair.val.class_names = ds.class_names;
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        (in_val[i] ? pair.val : pair.train).examples.push_back(ds.examples[i]);
    }
    return pair;
}

DomainDataset subsample(const DomainDataset& ds, int n, std::uint64_t seed) {
    if (n <= 0 || n > ds.size()) {
        throw ValidationError("subsample size must be in (0, " + std::to_string(ds.size()) +
                              "], got " + std::to_string(n));
    }
    int c = ds.num_classes();
    std::vector<std::vector<int>> by_class(static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < ds.examples.size(); ++i) {
        by_class[static_cast<std::size_t>(ds.examples[i].label)].push_back(static_cast<int>(i));
    }
    for (int cls = 0; cls < c; ++cls) {
        RngStream rng = RngStream::derive(seed, "subsample", static_cast<std::uint64_t>(cls));
        rng.shuffle(by_class[static_cast<std::size_t>(cls)]);
    }

    // even quotas, remainder to the first classes; spill over when a class
    // runs short
    std::vector<int> quota(static_cast<std::size_t>(c), n / c);
    for (int i = 0; i < n % c; ++i) quota[static_cast<std::size_t>(i)] += 1;
    int deficit = 0;
    for (int cls = 0; cls < c; ++cls) {
        int avail = static_cast<int>(by_class[static_cast<std::size_t>(cls)].size());
        if (quota[static_cast<std::size_t>(cls)] > avail) {
            deficit += quota[static_cast<std::size_t>(cls)] - avail;
            quota[static_cast<std::size_t>(cls)] = avail;
        }
    }
    for (int cls = 0; cls < c && deficit > 0; ++cls) {
        int avail = static_cast<int>(by_class[static_cast<std::size_t>(cls)].size());
        int extra = std::min(deficit, avail - quota[static_cast<std::size_t>(cls)]);
        quota[static_cast<std::size_t>(cls)] += extra;
        deficit -= extra;
    }

    std::vector<int> chosen;
    for (int cls = 0; cls < c; ++cls) {
        const auto& pool = by_class[static_cast<std::size_t>(cls)];
        for (int i = 0; i < quota[static_cast<std::size_t>(cls)]; ++i) chosen.push_back(pool[static_cast<std::size_t>(i)]);
    }
    std::sort(chosen.begin(), chosen.end());  // keep dataset order deterministic

    DomainDataset out;
    out.name = ds.name + ":sub" + std::to_string(n);
    out.domains = ds.domains;
    out.class_names = ds.class_names;
    for (int i : chosen) out.examples.push_back(ds.examples[static_cast<std::size_t>(i)]);
    return out;
}

// ---------------------------------------------------------------------------
// mini-batches
// ---------------------------------------------------------------------------

Tensor one_hot(const std::vector<int>& labels, int num_classes) {
    Tensor t({static_cast<int>(labels.size()), num_classes});
    for (std::size_t i = 0; i < labels.size(); ++i) t.at(static_cast<int>(i), labels[i]) = 1.0;
    return t;
}

Tensor normalize_images(const Tensor& raw, const NormStats& norm) {
    Tensor out = raw;
    int b = out.dim(0), c = out.dim(1);
    std::int64_t plane = static_cast<std::int64_t>(out.dim(2)) * out.dim(3);
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            double* base = out.data() + (static_cast<std::int64_t>(bi) * c + ci) * plane;
            for (std::int64_t i = 0; i < plane; ++i) base[i] = (base[i] - norm.mean[ci]) / norm.std[ci];
        }
    }
    return out;
}

Tensor denormalize_images(const Tensor& images, const NormStats& norm) {
    Tensor out = images;
    int b = out.dim(0), c = out.dim(1);
    std::int64_t plane = static_cast<std::int64_t>(out.dim(2)) * out.dim(3);
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            double* base = out.data() + (static_cast<std::int64_t>(bi) * c + ci) * plane;
            for (std::int64_t i = 0; i < plane; ++i) base[i] = base[i] * norm.std[ci] + norm.mean[ci];
        }
    }
    return out;
}

Tensor MiniBatch::target_matrix() const {
    if (has_soft_labels()) return soft_labels;
    return one_hot(labels, num_classes);
}

Tensor MiniBatch::denormalized_images() const { return denormalize_images(images, norm); }

void MiniBatch::set_images_from_raw(const Tensor& raw) { images = normalize_images(raw, norm); }

namespace {

// random crop with replicate padding 4 + horizontal flip (p = 0.5)
Tensor default_augment(const Tensor& img, RngStream& rng) {
    const int pad = 4;
    int h = img.dim(1), w = img.dim(2);
    int dy = rng.uniform_int(2 * pad + 1);
    int dx = rng.uniform_int(2 * pad + 1);
    bool flip = rng.uniform() < 0.5;
    Tensor out({3, h, w});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            int sy = std::clamp(y + dy - pad, 0, h - 1);
            for (int x = 0; x < w; ++x) {
                int sx = std::clamp(x + dx - pad, 0, w - 1);
                out.at(c, y, x) = img.at(c, sy, flip ? (w - 1 - sx) : sx);
            }
        }
    }
    return out;
}

std::string batch_domain_tag(const DomainDataset& ds) {
    if (ds.domains.size() == 1) return ds.domains.front();
    std::set<std::string> present;
    for (const auto& ex : ds.examples) present.insert(ex.domain);
    return present.size() == 1 ? *present.begin() : ds.name;
}

}  // namespace

std::vector<MiniBatch> make_minibatches(const DomainDataset& ds, int batch_size, std::uint64_t seed,
                                        int epoch, const MiniBatchOptions& opts) {
    if (batch_size < 2) throw ValidationError("batch_size must be >= 2");
    if (ds.size() < batch_size) {
        throw ValidationError("dataset smaller than batch_size: " + std::to_string(ds.size()) + " < " +
                              std::to_string(batch_size));
    }
    if (ds.examples.empty()) return {};
    RngStream shuffle_rng = RngStream::derive(seed, "shuffle", static_cast<std::uint64_t>(epoch));
    RngStream aug_rng = RngStream::derive(seed, "augment", static_cast<std::uint64_t>(epoch));
    std::vector<int> order = shuffle_rng.permutation(static_cast<int>(ds.size()));

    int h = ds.examples.front().image.dim(1);
    int w = ds.examples.front().image.dim(2);
    std::string tag = batch_domain_tag(ds);

    std::vector<MiniBatch> batches;
    int n_batches = static_cast<int>(ds.size()) / batch_size;
    for (int bi = 0; bi < n_batches; ++bi) {
        MiniBatch mb;
        mb.num_classes = ds.num_classes();
        mb.domain_tag = tag;
        mb.norm = opts.norm;
        mb.augmented = opts.augment;
        Tensor raw({batch_size, 3, h, w});
        mb.labels.resize(static_cast<std::size_t>(batch_size));
        for (int i = 0; i < batch_size; ++i) {
            const auto& ex = ds.examples[static_cast<std::size_t>(order[static_cast<std::size_t>(bi * batch_size + i)])];
            Tensor img = opts.augment ? default_augment(ex.image, aug_rng) : ex.image;
            std::copy(img.data(), img.data() + img.size(),
                      raw.data() + static_cast<std::int64_t>(i) * img.size());
            mb.labels[static_cast<std::size_t>(i)] = ex.label;
        }
        mb.images = normalize_images(raw, opts.norm);
        batches.push_back(std::move(mb));
    }
    return batches;
}

std::vector<MiniBatch> eval_minibatches(const DomainDataset& ds, int batch_size, const NormStats& norm) {
    if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
    std::vector<MiniBatch> batches;
    if (ds.examples.empty()) return batches;
    int h = ds.examples.front().image.dim(1);
    int w = ds.examples.front().image.dim(2);
    std::string tag = batch_domain_tag(ds);
    for (std::int64_t start = 0; start < ds.size(); start += batch_size) {
        int b = static_cast<int>(std::min<std::int64_t>(batch_size, ds.size() - start));
        MiniBatch mb;
        mb.num_classes = ds.num_classes();
        mb.domain_tag = tag;
        mb.norm = norm;
        mb.augmented = false;
        Tensor raw({b, 3, h, w});
        mb.labels.resize(static_cast<std::size_t>(b));
        for (int i = 0; i < b; ++i) {
            const auto& ex = ds.examples[static_cast<std::size_t>(start + i)];
            std::copy(ex.image.data(), ex.image.data() + ex.image.size(),
                      raw.data() + static_cast<std::int64_t>(i) * ex.image.size());
            mb.labels[static_cast<std::size_t>(i)] = ex.label;
        }
        mb.images = normalize_images(raw, norm);
        batches.push_back(std::move(mb));
    }
    return batches;
}

}  // namespace pmdg
