#include "pmdg/transforms.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

namespace pmdg {

std::int64_t TransformSet::total_calls() const {
    std::int64_t n = 0;
    for (const auto& op : ops) n += op->raw_calls() + op->batch_calls();
    return n;
}

// ---------------------------------------------------------------------------
// pure kernels
// ---------------------------------------------------------------------------

MiniBatch mixup_blend(const MiniBatch& batch, double lambda, int partner_shift) {
    int b = batch.batch_size();
    if (b < 2) throw ValidationError("mixup requires batch size >= 2");
    int c = batch.images.dim(1), h = batch.images.dim(2), w = batch.images.dim(3);
    std::int64_t plane = static_cast<std::int64_t>(c) * h * w;

    MiniBatch out = batch;
    Tensor targets = batch.target_matrix();
    Tensor mixed_targets({b, batch.num_classes});
    for (int i = 0; i < b; ++i) {
        int j = (i + partner_shift) % b;
        const double* xi = batch.images.data() + i * plane;
        const double* xj = batch.images.data() + j * plane;
        double* y = out.images.data() + i * plane;
        for (std::int64_t p = 0; p < plane; ++p) y[p] = lambda * xi[p] + (1.0 - lambda) * xj[p];
        for (int cc = 0; cc < batch.num_classes; ++cc) {
            mixed_targets.at(i, cc) = lambda * targets.at(i, cc) + (1.0 - lambda) * targets.at(j, cc);
        }
    }
    out.labels.clear();
    out.soft_labels = std::move(mixed_targets);
    return out;
}

MiniBatch cutmix_paste(const MiniBatch& batch, int partner_shift, int cy, int cx, int bh, int bw) {
    int b = batch.batch_size();
    if (b < 2) throw ValidationError("cutmix requires batch size >= 2");
    int c = batch.images.dim(1), h = batch.images.dim(2), w = batch.images.dim(3);
    int y0 = std::clamp(cy, 0, h), x0 = std::clamp(cx, 0, w);
    int y1 = std::clamp(cy + bh, 0, h), x1 = std::clamp(cx + bw, 0, w);
    double area = static_cast<double>(std::max(0, y1 - y0)) * std::max(0, x1 - x0);
    double lambda = 1.0 - area / (static_cast<double>(h) * w);

    MiniBatch out = batch;
    Tensor targets = batch.target_matrix();
    Tensor mixed_targets({b, batch.num_classes});
    for (int i = 0; i < b; ++i) {
        int j = (i + partner_shift) % b;
        for (int ci = 0; ci < c; ++ci) {
            for (int y = y0; y < y1; ++y) {
                for (int x = x0; x < x1; ++x) {
                    out.images.at(i, ci, y, x) = batch.images.at(j, ci, y, x);
                }
            }
        }
        for (int cc = 0; cc < batch.num_classes; ++cc) {
            mixed_targets.at(i, cc) = lambda * targets.at(i, cc) + (1.0 - lambda) * targets.at(j, cc);
        }
    }
    out.labels.clear();
    out.soft_labels = std::move(mixed_targets);
    return out;
}

Tensor rand_conv_kernel(int kernel_size, RngStream& rng) {
    if (kernel_size < 1 || kernel_size % 2 == 0) {
        throw ValidationError("rand_conv kernel size must be odd and >= 1, got " +
                              std::to_string(kernel_size));
    }
    Tensor k({3, 3, kernel_size, kernel_size});
    double sigma = std::sqrt(1.0 / (static_cast<double>(kernel_size) * kernel_size * 3.0));
    for (std::int64_t i = 0; i < k.size(); ++i) k[i] = sigma * rng.normal();
    return k;
}

Tensor conv2d_replicate(const Tensor& images, const Tensor& kernel) {
    int b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    int oc = kernel.dim(0), k = kernel.dim(2);
    int pad = (k - 1) / 2;
    Tensor out({b, oc, h, w});
    for (int bi = 0; bi < b; ++bi) {
        for (int o = 0; o < oc; ++o) {
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    double s = 0.0;
                    for (int ci = 0; ci < c; ++ci) {
                        for (int ky = 0; ky < k; ++ky) {
                            int iy = std::clamp(y + ky - pad, 0, h - 1);
                            for (int kx = 0; kx < k; ++kx) {
                                int ix = std::clamp(x + kx - pad, 0, w - 1);
                                s += images.at(bi, ci, iy, ix) * kernel.at(o, ci, ky, kx);
                            }
                        }
                    }
                    out.at(bi, o, y, x) = s;
                }
            }
        }
    }
    return out;
}

Tensor restandardize_channels(const Tensor& images, const Tensor& reference, double eps) {
    int b = images.dim(0), c = images.dim(1);
    std::int64_t plane = static_cast<std::int64_t>(images.dim(2)) * images.dim(3);
    std::int64_t count = static_cast<std::int64_t>(b) * plane;
    Tensor out = images;
    for (int ci = 0; ci < c; ++ci) {
        double m_out = 0.0, m_ref = 0.0;
        for (int bi = 0; bi < b; ++bi) {
            const double* po = images.data() + (static_cast<std::int64_t>(bi) * c + ci) * plane;
            const double* pr = reference.data() + (static_cast<std::int64_t>(bi) * c + ci) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                m_out += po[i];
                m_ref += pr[i];
            }
        }
        m_out /= count;
        m_ref /= count;
        double v_out = 0.0, v_ref = 0.0;
        for (int bi = 0; bi < b; ++bi) {
            const double* po = images.data() + (static_cast<std::int64_t>(bi) * c + ci) * plane;
            const double* pr = reference.data() + (static_cast<std::int64_t>(bi) * c + ci) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                v_out += (po[i] - m_out) * (po[i] - m_out);
                v_ref += (pr[i] - m_ref) * (pr[i] - m_ref);
            }
        }
        double s_out = std::sqrt(v_out / count);
        double s_ref = std::sqrt(v_ref / count);
        if (s_out < eps) continue;  // degenerate channel: skip rescale
        for (int bi = 0; bi < b; ++bi) {
            double* po = out.data() + (static_cast<std::int64_t>(bi) * c + ci) * plane;
            for (std::int64_t i = 0; i < plane; ++i) {
                po[i] = (po[i] - m_out) / s_out * s_ref + m_ref;
            }
        }
    }
    return out;
}

Tensor sobel_magnitude(const Tensor& lum) {
    if (lum.ndim() != 2) throw std::invalid_argument("sobel_magnitude: expects [h,w]");
    int h = lum.dim(0), w = lum.dim(1);
    static const int gx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static const int gy[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    Tensor out({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double sx = 0.0, sy = 0.0;
            for (int ky = 0; ky < 3; ++ky) {
                int iy = std::clamp(y + ky - 1, 0, h - 1);
                for (int kx = 0; kx < 3; ++kx) {
                    int ix = std::clamp(x + kx - 1, 0, w - 1);
                    double v = lum.at(iy, ix);
                    sx += gx[ky][kx] * v;
                    sy += gy[ky][kx] * v;
                }
            }
            out.at(y, x) = std::sqrt(sx * sx + sy * sy);
        }
    }
    return out;
}

Tensor edge_sketch(const Tensor& raw) {
    int h = raw.dim(1), w = raw.dim(2);
    Tensor lum({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            lum.at(y, x) = 0.299 * raw.at(0, y, x) + 0.587 * raw.at(1, y, x) + 0.114 * raw.at(2, y, x);
        }
    }
    Tensor mag = sobel_magnitude(lum);
    double peak = mag.max();
    Tensor out({3, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = peak > 1e-12 ? mag.at(y, x) / peak : 0.0;
            double sketch = 1.0 - v;  // white background, dark strokes
            out.at(0, y, x) = sketch;
            out.at(1, y, x) = sketch;
            out.at(2, y, x) = sketch;
        }
    }
    return out;
}

Tensor style_swap(const Tensor& content, const Tensor& style, double eps) {
    int c = content.dim(0);
    std::int64_t plane = static_cast<std::int64_t>(content.dim(1)) * content.dim(2);
    Tensor out = content;
    for (int ci = 0; ci < c; ++ci) {
        const double* pc = content.data() + ci * plane;
        const double* ps = style.data() + ci * plane;
        double mu_c = 0.0, mu_s = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) {
            mu_c += pc[i];
            mu_s += ps[i];
        }
        mu_c /= plane;
        mu_s /= plane;
        double var_c = 0.0, var_s = 0.0;
        for (std::int64_t i = 0; i < plane; ++i) {
            var_c += (pc[i] - mu_c) * (pc[i] - mu_c);
            var_s += (ps[i] - mu_s) * (ps[i] - mu_s);
        }
        double sd_c = std::sqrt(var_c / plane);
        double sd_s = std::sqrt(var_s / plane);
        double* po = out.data() + ci * plane;
        double denom = std::max(sd_c, eps);
        for (std::int64_t i = 0; i < plane; ++i) {
            po[i] = sd_s * (pc[i] - mu_c) / denom + mu_s;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// pixel-op pool
// ---------------------------------------------------------------------------

const std::vector<PixelOp>& pixel_op_pool() {
    static const std::vector<PixelOp> pool = {
        PixelOp::identity,   PixelOp::autocontrast, PixelOp::equalize,  PixelOp::posterize,
        PixelOp::solarize,   PixelOp::brightness,   PixelOp::contrast,  PixelOp::saturation,
        PixelOp::rotate,     PixelOp::shear_x,      PixelOp::shear_y,   PixelOp::translate_x,
        PixelOp::translate_y};
    return pool;
}

std::string pixel_op_name(PixelOp op) {
    switch (op) {
        case PixelOp::identity: return "identity";
        case PixelOp::autocontrast: return "autocontrast";
        case PixelOp::equalize: return "equalize";
        case PixelOp::posterize: return "posterize";
        case PixelOp::solarize: return "solarize";
        case PixelOp::brightness: return "brightness";
        case PixelOp::contrast: return "contrast";
        case PixelOp::saturation: return "saturation";
        case PixelOp::rotate: return "rotate";
        case PixelOp::shear_x: return "shear_x";
        case PixelOp::shear_y: return "shear_y";
        case PixelOp::translate_x: return "translate_x";
        case PixelOp::translate_y: return "translate_y";
    }
    return "?";
}

namespace {

// Inverse-mapped affine warp with bilinear sampling and replicate border:
// src = A * (dst - center) + center + t.
Tensor affine_warp(const Tensor& img, double a00, double a01, double a10, double a11, double tx,
                   double ty) {
    int c = img.dim(0), h = img.dim(1), w = img.dim(2);
    double cy = (h - 1) * 0.5, cx = (w - 1) * 0.5;
    Tensor out({c, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double dy = y - cy, dx = x - cx;
            double sy = a00 * dy + a01 * dx + cy + ty;
            double sx = a10 * dy + a11 * dx + cx + tx;
            sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
            sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
            int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
            int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
            double fy = sy - y0, fx = sx - x0;
            for (int ci = 0; ci < c; ++ci) {
                out.at(ci, y, x) = (1 - fy) * ((1 - fx) * img.at(ci, y0, x0) + fx * img.at(ci, y0, x1)) +
                                   fy * ((1 - fx) * img.at(ci, y1, x0) + fx * img.at(ci, y1, x1));
            }
        }
    }
    return out;
}

Tensor per_channel_autocontrast(const Tensor& img) {
    Tensor out = img;
    int c = img.dim(0);
    std::int64_t plane = static_cast<std::int64_t>(img.dim(1)) * img.dim(2);
    for (int ci = 0; ci < c; ++ci) {
        const double* p = img.data() + ci * plane;
        double lo = p[0], hi = p[0];
        for (std::int64_t i = 0; i < plane; ++i) {
            lo = std::min(lo, p[i]);
            hi = std::max(hi, p[i]);
        }
        if (hi - lo < 1e-12) continue;
        double* q = out.data() + ci * plane;
        for (std::int64_t i = 0; i < plane; ++i) q[i] = (p[i] - lo) / (hi - lo);
    }
    return out;
}

Tensor per_channel_equalize(const Tensor& img) {
    Tensor out = img;
    int c = img.dim(0);
    std::int64_t plane = static_cast<std::int64_t>(img.dim(1)) * img.dim(2);
    for (int ci = 0; ci < c; ++ci) {
        const double* p = img.data() + ci * plane;
        std::array<std::int64_t, 256> hist{};
        for (std::int64_t i = 0; i < plane; ++i) {
            int bin = std::clamp(static_cast<int>(p[i] * 255.0), 0, 255);
            hist[static_cast<std::size_t>(bin)]++;
        }
        std::array<double, 256> cdf{};
        std::int64_t acc = 0;
        for (int b = 0; b < 256; ++b) {
            acc += hist[static_cast<std::size_t>(b)];
            cdf[static_cast<std::size_t>(b)] = static_cast<double>(acc) / plane;
        }
        double* q = out.data() + ci * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
            int bin = std::clamp(static_cast<int>(p[i] * 255.0), 0, 255);
            q[i] = cdf[static_cast<std::size_t>(bin)];
        }
    }
    return out;
}

Tensor luminance_of(const Tensor& img) {
    int h = img.dim(1), w = img.dim(2);
    Tensor lum({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            lum.at(y, x) = 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
        }
    }
    return lum;
}

}  // namespace

Tensor posterize(const Tensor& raw, int bits) {
    if (bits < 1 || bits > 8) throw ValidationError("posterize bits must be in [1,8]");
    double step = static_cast<double>(1 << (8 - bits));
    Tensor out = raw;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        double v = std::clamp(out[i], 0.0, 1.0) * 255.0;
        out[i] = std::floor(v / step) * step / 255.0;
    }
    return out;
}

Tensor solarize(const Tensor& raw, double threshold) {
    Tensor out = raw;
    for (std::int64_t i = 0; i < out.size(); ++i) {
        if (out[i] > threshold) out[i] = 1.0 - out[i];
    }
    return out;
}

Tensor apply_pixel_op(PixelOp op, const Tensor& raw, double signed_mag) {
    double mag = std::abs(signed_mag);
    switch (op) {
        case PixelOp::identity:
            return raw;
        case PixelOp::autocontrast:
            return per_channel_autocontrast(raw);
        case PixelOp::equalize:
            return per_channel_equalize(raw);
        case PixelOp::posterize:
            return posterize(raw, 8 - static_cast<int>(std::lround(mag * 7.0)));
        case PixelOp::solarize:
            return solarize(raw, 1.0 - mag);
        case PixelOp::brightness: {
            double f = 1.0 + 0.9 * signed_mag;
            Tensor out = raw;
            for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i] * f, 0.0, 1.0);
            return out;
        }
        case PixelOp::contrast: {
            double f = 1.0 + 0.9 * signed_mag;
            double mean = luminance_of(raw).mean();
            Tensor out = raw;
            for (std::int64_t i = 0; i < out.size(); ++i) {
                out[i] = std::clamp((out[i] - mean) * f + mean, 0.0, 1.0);
            }
            return out;
        }
        case PixelOp::saturation: {
            double f = 1.0 + 0.9 * signed_mag;
            Tensor lum = luminance_of(raw);
            int h = raw.dim(1), w = raw.dim(2);
            Tensor out = raw;
            for (int c = 0; c < 3; ++c) {
                for (int y = 0; y < h; ++y) {
                    for (int x = 0; x < w; ++x) {
                        double g = lum.at(y, x);
                        out.at(c, y, x) = std::clamp(g + f * (raw.at(c, y, x) - g), 0.0, 1.0);
                    }
                }
            }
            return out;
        }
        case PixelOp::rotate: {
            double th = signed_mag * 30.0 * M_PI / 180.0;
            double ct = std::cos(th), st = std::sin(th);
            return affine_warp(raw, ct, -st, st, ct, 0.0, 0.0);
        }
        case PixelOp::shear_x:
            return affine_warp(raw, 1.0, 0.0, signed_mag * 0.3, 1.0, 0.0, 0.0);
        case PixelOp::shear_y:
            return affine_warp(raw, 1.0, signed_mag * 0.3, 0.0, 1.0, 0.0, 0.0);
        case PixelOp::translate_x:
            return affine_warp(raw, 1.0, 0.0, 0.0, 1.0, -signed_mag * 0.3 * raw.dim(2), 0.0);
        case PixelOp::translate_y:
            return affine_warp(raw, 1.0, 0.0, 0.0, 1.0, 0.0, -signed_mag * 0.3 * raw.dim(1));
    }
    return raw;
}

namespace {

void check_raw_range(const std::vector<Tensor>& images) {
    for (const auto& img : images) {
        if (img.min() < -1e-3 || img.max() > 1.0 + 1e-3) {
            throw ValidationError(
                "pixel policy transforms operate on raw images in [0,1]; got values in [" +
                std::to_string(img.min()) + ", " + std::to_string(img.max()) +
                "] (normalized tensors?)");
        }
    }
}

}  // namespace

std::vector<Tensor> pixel_policy_apply(const std::vector<Tensor>& raw_images, PixelPolicyMode mode,
                                       int n_ops, int magnitude, RngStream& rng) {
    if (n_ops < 0) throw ValidationError("n_ops must be >= 0");
    if (magnitude < 0 || magnitude > 10) throw ValidationError("magnitude must be in [0,10]");
    check_raw_range(raw_images);
    const auto& pool = pixel_op_pool();
    std::vector<Tensor> out;
    out.reserve(raw_images.size());
    for (const auto& img : raw_images) {
        Tensor cur = img;
        if (mode == PixelPolicyMode::randaugment) {
            for (int i = 0; i < n_ops; ++i) {
                PixelOp op = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
                double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
                cur = apply_pixel_op(op, cur, sign * magnitude / 10.0);
            }
        } else {
            PixelOp op = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
            double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
            cur = apply_pixel_op(op, cur, sign * rng.uniform());
        }
        out.push_back(std::move(cur));
    }
    return out;
}

Tensor augmix_mixture(const Tensor& raw,
                      const std::vector<std::vector<std::pair<PixelOp, double>>>& chains,
                      const std::vector<double>& weights, double m) {
    if (chains.size() != weights.size()) {
        throw ValidationError("augmix: chains and weights must have equal length");
    }
    Tensor mixture(raw.shape());
    for (std::size_t i = 0; i < chains.size(); ++i) {
        Tensor cur = raw;
        for (const auto& [op, mag] : chains[i]) cur = apply_pixel_op(op, cur, mag);
        for (std::int64_t p = 0; p < mixture.size(); ++p) mixture[p] += weights[i] * cur[p];
    }
    Tensor out = raw;
    for (std::int64_t p = 0; p < out.size(); ++p) {
        out[p] = std::clamp(m * raw[p] + (1.0 - m) * mixture[p], 0.0, 1.0);
    }
    return out;
}

Tensor value_noise_texture(int h, int w, RngStream& rng) {
    Tensor tex({3, h, w});
    for (int grid : {4, 8, 16}) {
        double amp = 16.0 / grid;  // coarser octaves dominate
        for (int c = 0; c < 3; ++c) {
            Tensor coarse({grid, grid});
            for (std::int64_t i = 0; i < coarse.size(); ++i) coarse[i] = rng.uniform();
            // bilinear upsample onto [h,w]
            for (int y = 0; y < h; ++y) {
                double fy = grid > 1 ? static_cast<double>(y) * (grid - 1) / std::max(1, h - 1) : 0.0;
                int y0 = static_cast<int>(fy);
                int y1 = std::min(y0 + 1, grid - 1);
                double wy = fy - y0;
                for (int x = 0; x < w; ++x) {
                    double fx = grid > 1 ? static_cast<double>(x) * (grid - 1) / std::max(1, w - 1) : 0.0;
                    int x0 = static_cast<int>(fx);
                    int x1 = std::min(x0 + 1, grid - 1);
                    double wx = fx - x0;
                    double v = (1 - wy) * ((1 - wx) * coarse.at(y0, x0) + wx * coarse.at(y0, x1)) +
                               wy * ((1 - wx) * coarse.at(y1, x0) + wx * coarse.at(y1, x1));
                    tex.at(c, y, x) += amp * v;
                }
            }
        }
    }
    // per-channel min-max normalize
    std::int64_t plane = static_cast<std::int64_t>(h) * w;
    for (int c = 0; c < 3; ++c) {
        double* p = tex.data() + c * plane;
        double lo = p[0], hi = p[0];
        for (std::int64_t i = 0; i < plane; ++i) {
            lo = std::min(lo, p[i]);
            hi = std::max(hi, p[i]);
        }
        for (std::int64_t i = 0; i < plane; ++i) {
            p[i] = hi - lo > 1e-12 ? (p[i] - lo) / (hi - lo) : 0.5;
        }
    }
    return tex;
}

Tensor ipmix_blend(const Tensor& raw, const Tensor& texture, IpmixBlend mode,
                   const Tensor& weight_field) {
    int h = raw.dim(1), w = raw.dim(2);
    Tensor out = raw;
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double wv = weight_field.at(y, x);
                double xv = raw.at(c, y, x);
                double tv = texture.at(c, y, x);
                double v = mode == IpmixBlend::additive ? (1.0 - wv) * xv + wv * tv
                                                        : xv * ((1.0 - wv) + 2.0 * wv * tv);
                out.at(c, y, x) = std::clamp(v, 0.0, 1.0);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// registered ops
// ---------------------------------------------------------------------------

namespace {

std::vector<Tensor> batch_to_raw_images(const MiniBatch& batch) {
    Tensor raw = batch.denormalized_images();
    int b = raw.dim(0), c = raw.dim(1), h = raw.dim(2), w = raw.dim(3);
    std::int64_t plane = static_cast<std::int64_t>(c) * h * w;
    std::vector<Tensor> images;
    images.reserve(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
        Tensor img({c, h, w});
        std::copy(raw.data() + i * plane, raw.data() + (i + 1) * plane, img.data());
        images.push_back(std::move(img));
    }
    return images;
}

Tensor raw_images_to_tensor(const std::vector<Tensor>& images) {
    int b = static_cast<int>(images.size());
    int c = images.front().dim(0), h = images.front().dim(1), w = images.front().dim(2);
    Tensor raw({b, c, h, w});
    std::int64_t plane = static_cast<std::int64_t>(c) * h * w;
    for (int i = 0; i < b; ++i) {
        std::copy(images[static_cast<std::size_t>(i)].data(),
                  images[static_cast<std::size_t>(i)].data() + plane, raw.data() + i * plane);
    }
    return raw;
}

class OrgTransform : public TransformOp {
public:
    explicit OrgTransform(RngStream rng) : TransformOp("org", TransformLevel::both, rng) {}
};

class MixupTransform : public TransformOp {
public:
    MixupTransform(RngStream rng, double alpha = 0.2)
        : TransformOp("mixup", TransformLevel::batch, rng), alpha_(alpha) {
        if (alpha_ <= 0.0) throw ValidationError("mixup alpha must be > 0");
    }

protected:
    MiniBatch do_apply_batch(const MiniBatch& batch) override {
        int b = batch.batch_size();
        if (b < 2) throw ValidationError("mixup requires batch size >= 2");
        double lambda = rng_.beta(alpha_, alpha_);
        int shift = 1 + rng_.uniform_int(b - 1);  // derangement by rotation
        return mixup_blend(batch, lambda, shift);
    }

private:
    double alpha_;
};

class CutmixTransform : public TransformOp {
public:
    CutmixTransform(RngStream rng, double alpha = 1.0)
        : TransformOp("cutmix", TransformLevel::batch, rng), alpha_(alpha) {
        if (alpha_ <= 0.0) throw ValidationError("cutmix alpha must be > 0");
    }

protected:
    MiniBatch do_apply_batch(const MiniBatch& batch) override {
        int b = batch.batch_size();
        if (b < 2) throw ValidationError("cutmix requires batch size >= 2");
        int h = batch.images.dim(2), w = batch.images.dim(3);
        double lambda = rng_.beta(alpha_, alpha_);
        int bh = static_cast<int>(std::lround(h * std::sqrt(1.0 - lambda)));
        int bw = static_cast<int>(std::lround(w * std::sqrt(1.0 - lambda)));
        int cy = rng_.uniform_int(h) - bh / 2;
        int cx = rng_.uniform_int(w) - bw / 2;
        int shift = 1 + rng_.uniform_int(b - 1);
        return cutmix_paste(batch, shift, cy, cx, bh, bw);
    }

private:
    double alpha_;
};

class RandConvTransform : public TransformOp {
public:
    RandConvTransform(RngStream rng, std::vector<int> kernel_sizes = {1, 3},
                      double mix_prob = 0.2)
        : TransformOp("rand_conv", TransformLevel::batch, rng),
          kernel_sizes_(std::move(kernel_sizes)),
          mix_prob_(mix_prob) {
        if (kernel_sizes_.empty()) throw ValidationError("rand_conv needs at least one kernel size");
        for (int k : kernel_sizes_) {
            if (k < 1 || k % 2 == 0) {
                throw ValidationError("rand_conv kernel size must be odd and >= 1, got " +
                                      std::to_string(k));
            }
        }
    }

protected:
    MiniBatch do_apply_batch(const MiniBatch& batch) override {
        int k = kernel_sizes_[static_cast<std::size_t>(
            rng_.uniform_int(static_cast<int>(kernel_sizes_.size())))];
        Tensor kernel = rand_conv_kernel(k, rng_);
        Tensor conv = conv2d_replicate(batch.images, kernel);
        if (rng_.uniform() < mix_prob_) {
            double lambda = rng_.uniform();
            for (std::int64_t i = 0; i < conv.size(); ++i) {
                conv[i] = lambda * batch.images[i] + (1.0 - lambda) * conv[i];
            }
        }
        MiniBatch out = batch;
        out.images = restandardize_channels(conv, batch.images);
        return out;
    }

private:
    std::vector<int> kernel_sizes_;
    double mix_prob_;
};

class AugmixLiteTransform : public TransformOp {
public:
    AugmixLiteTransform(RngStream rng, int severity = 3, int width = 3, int depth = 3,
                        double dirichlet_alpha = 1.0)
        : TransformOp("augmix_lite", TransformLevel::batch, rng),
          severity_(severity),
          width_(width),
          depth_(depth),
          alpha_(dirichlet_alpha) {
        if (severity_ < 1 || severity_ > 10) throw ValidationError("augmix severity must be in [1,10]");
        if (width_ < 1) throw ValidationError("augmix width must be >= 1");
        if (depth_ < 1) throw ValidationError("augmix depth must be >= 1");
        if (alpha_ <= 0.0) throw ValidationError("augmix dirichlet_alpha must be > 0");
    }

protected:
    MiniBatch do_apply_batch(const MiniBatch& batch) override {
        auto images = batch_to_raw_images(batch);
        const auto& pool = pixel_op_pool();
        double cap = severity_ / 10.0;
        for (auto& img : images) {
            std::vector<std::vector<std::pair<PixelOp, double>>> chains(
                static_cast<std::size_t>(width_));
            for (auto& chain : chains) {
                int len = 1 + rng_.uniform_int(depth_);
                for (int i = 0; i < len; ++i) {
                    PixelOp op =
                        pool[static_cast<std::size_t>(rng_.uniform_int(static_cast<int>(pool.size())))];
                    chain.emplace_back(op, rng_.uniform(-cap, cap));
                }
            }
            std::vector<double> weights = rng_.dirichlet(alpha_, width_);
            double m = rng_.beta(alpha_, alpha_);
            img = augmix_mixture(img, chains, weights, m);
        }
        MiniBatch out = batch;
        out.set_images_from_raw(raw_images_to_tensor(images));
        return out;
    }

private:
    int severity_, width_, depth_;
    double alpha_;
};

class IpmixLiteTransform : public TransformOp {
public:
    IpmixLiteTransform(RngStream rng, int severity = 3, int mixing_set_size = 16)
        : TransformOp("ipmix_lite", TransformLevel::batch, rng),
          severity_(severity),
          mixing_set_size_(mixing_set_size) {
        if (severity_ < 1 || severity_ > 10) throw ValidationError("ipmix severity must be in [1,10]");
        if (mixing_set_size_ < 1) throw ValidationError("ipmix mixing_set_size must be >= 1");
        pool_seed_ = rng_.next_u64();
    }

    // The texture pool is generated once per run from the op's seed, lazily at
    // the first batch (it needs the image size).
    const std::vector<Tensor>& texture_pool(int h, int w) {
        if (pool_.empty() || pool_.front().dim(1) != h || pool_.front().dim(2) != w) {
            pool_.clear();
            RngStream pool_rng = RngStream::derive(pool_seed_, "ipmix-pool");
            for (int i = 0; i < mixing_set_size_; ++i) {
                pool_.push_back(value_noise_texture(h, w, pool_rng));
            }
        }
        return pool_;
    }

protected:
    MiniBatch do_apply_batch(const MiniBatch& batch) override {
        int h = batch.images.dim(2), w = batch.images.dim(3);
        const auto& pool = texture_pool(h, w);
        const auto& ops = pixel_op_pool();
        double cap = severity_ / 10.0;
        double wmax = 0.15 + 0.35 * severity_ / 10.0;
        auto images = batch_to_raw_images(batch);
        for (auto& img : images) {
            // short augmix-style chain first
            int len = 1 + rng_.uniform_int(3);
            for (int i = 0; i < len; ++i) {
                PixelOp op =
                    ops[static_cast<std::size_t>(rng_.uniform_int(static_cast<int>(ops.size())))];
                img = apply_pixel_op(op, img, rng_.uniform(-cap, cap));
            }
            const Tensor& tex =
                pool[static_cast<std::size_t>(rng_.uniform_int(static_cast<int>(pool.size())))];
            IpmixBlend mode = rng_.uniform() < 0.5 ? IpmixBlend::additive : IpmixBlend::multiplicative;
            int gran = rng_.uniform_int(3);  // 0 pixel, 1 patch4, 2 whole
            Tensor weight({h, w});
            if (gran == 2) {
                weight.fill(rng_.uniform(0.0, wmax));
            } else if (gran == 1) {
                for (int y0 = 0; y0 < h; y0 += 4) {
                    for (int x0 = 0; x0 < w; x0 += 4) {
                        double wv = rng_.uniform(0.0, wmax);
                        for (int y = y0; y < std::min(y0 + 4, h); ++y) {
                            for (int x = x0; x < std::min(x0 + 4, w); ++x) weight.at(y, x) = wv;
                        }
                    }
                }
            } else {
                for (std::int64_t i = 0; i < weight.size(); ++i) weight[i] = rng_.uniform(0.0, wmax);
            }
            img = ipmix_blend(img, tex, mode, weight);
        }
        MiniBatch out = batch;
        out.set_images_from_raw(raw_images_to_tensor(images));
        return out;
    }

private:
    int severity_, mixing_set_size_;
    std::uint64_t pool_seed_ = 0;
    std::vector<Tensor> pool_;
};

class PixelPolicyTransform : public TransformOp {
public:
    PixelPolicyTransform(std::string name, RngStream rng, PixelPolicyMode mode, int n_ops,
                         int magnitude)
        : TransformOp(std::move(name), TransformLevel::dataset, rng),
          mode_(mode),
          n_ops_(n_ops),
          magnitude_(magnitude) {}

protected:
    std::vector<Tensor> do_apply_raw(const std::vector<Tensor>& images) override {
        return pixel_policy_apply(images, mode_, n_ops_, magnitude_, rng_);
    }

private:
    PixelPolicyMode mode_;
    int n_ops_;
    int magnitude_;
};

class EdgeTransform : public TransformOp {
public:
    explicit EdgeTransform(RngStream rng) : TransformOp("edge", TransformLevel::batch, rng) {}

protected:
    MiniBatch do_apply_batch(const MiniBatch& batch) override {
        auto images = batch_to_raw_images(batch);
        for (auto& img : images) img = edge_sketch(img);
        MiniBatch out = batch;
        out.set_images_from_raw(raw_images_to_tensor(images));
        return out;
    }
};

class StyleStatsTransform : public TransformOp {
public:
    explicit StyleStatsTransform(RngStream rng)
        : TransformOp("style_stats", TransformLevel::batch, rng) {}

protected:
    MiniBatch do_apply_batch(const MiniBatch& batch) override {
        int b = batch.batch_size();
        if (b < 2) throw ValidationError("style_stats requires batch size >= 2");
        int c = batch.images.dim(1), h = batch.images.dim(2), w = batch.images.dim(3);
        std::int64_t plane = static_cast<std::int64_t>(c) * h * w;
        MiniBatch out = batch;
        for (int i = 0; i < b; ++i) {
            int j = rng_.uniform_int(b - 1);
            if (j >= i) ++j;  // uniform over partners != i
            Tensor content({c, h, w}), style({c, h, w});
            std::copy(batch.images.data() + i * plane, batch.images.data() + (i + 1) * plane,
                      content.data());
            std::copy(batch.images.data() + j * plane, batch.images.data() + (j + 1) * plane,
                      style.data());
            Tensor swapped = style_swap(content, style);
            std::copy(swapped.data(), swapped.data() + plane, out.images.data() + i * plane);
        }
        return out;
    }
};

}  // namespace

const std::vector<std::string>& registered_transform_names() {
    static const std::vector<std::string> names = {
        "org",        "mixup",       "cutmix",           "rand_conv",
        "augmix_lite", "ipmix_lite", "randaugment_lite", "trivialaugment_lite",
        "edge",       "style_stats"};
    return names;
}

TransformPtr make_transform(const std::string& name, RngStream rng) {
    if (name == "org") return std::make_unique<OrgTransform>(rng);
    if (name == "mixup") return std::make_unique<MixupTransform>(rng);
    if (name == "cutmix") return std::make_unique<CutmixTransform>(rng);
    if (name == "rand_conv") return std::make_unique<RandConvTransform>(rng);
    if (name == "augmix_lite") return std::make_unique<AugmixLiteTransform>(rng);
    if (name == "ipmix_lite") return std::make_unique<IpmixLiteTransform>(rng);
    if (name == "randaugment_lite") {
        return std::make_unique<PixelPolicyTransform>("randaugment_lite", rng,
                                                      PixelPolicyMode::randaugment, 2, 9);
    }
    if (name == "trivialaugment_lite") {
        return std::make_unique<PixelPolicyTransform>("trivialaugment_lite", rng,
                                                      PixelPolicyMode::trivialaugment, 1, 10);
    }
    if (name == "edge") return std::make_unique<EdgeTransform>(rng);
    if (name == "style_stats") return std::make_unique<StyleStatsTransform>(rng);

    std::ostringstream os;
    os << "unknown transform '" << name << "'; registered:";
    for (const auto& n : registered_transform_names()) os << " " << n;
    throw ValidationError(os.str());
}

TransformSet make_transform_set(const std::vector<std::string>& names, std::uint64_t seed) {
    if (names.empty()) throw ValidationError("empty transform set");
    TransformSet set;
    for (std::size_t k = 0; k < names.size(); ++k) {
        set.ops.push_back(make_transform(names[k], RngStream::derive(seed, "transform", k)));
    }
    return set;
}

std::vector<MiniBatch> apply_set(TransformSet& set, const MiniBatch& batch) {
    if (set.ops.empty()) throw ValidationError("empty transform set");
    std::vector<MiniBatch> out;
    out.reserve(set.ops.size());
    for (std::size_t k = 0; k < set.ops.size(); ++k) {
        TransformOp& op = *set.ops[k];
        MiniBatch result;
        if (op.level_used() == TransformLevel::dataset) {
            // raw-level op: run on a de-normalized copy inside the batch loop
            auto raw = op.apply_raw(batch_to_raw_images(batch));
            result = batch;
            result.set_images_from_raw(raw_images_to_tensor(raw));
        } else {
            result = op.apply_batch(batch);
        }
        result.domain_tag = "pseudo:" + op.name() + ":" + std::to_string(k);
        out.push_back(std::move(result));
    }
    return out;
}

}  // namespace pmdg
