#include "pmdg/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace pmdg::ad {

namespace {

Value make_node(Tensor value, std::vector<Value> parents, std::function<void(Node&)> backward_fn) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return n;
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
    if (!a->value.same_shape(b->value)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a->value.shape_str() +
                                    " vs " + b->value.shape_str());
    }
}

}  // namespace

Tensor& Node::ensure_grad() {
    if (grad.empty() && value.size() > 0) grad = Tensor::zeros(value.shape());
    return grad;
}

Value constant(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    return n;
}

Value leaf(Tensor t) {
    auto n = std::make_shared<Node>();
    n->value = std::move(t);
    n->requires_grad = true;
    return n;
}

Value add(const Value& a, const Value& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    out.add_(b->value);
    return make_node(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            auto& p = n.parents[static_cast<std::size_t>(k)];
            if (!p->requires_grad) continue;
            Tensor& g = p->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
        }
    });
}

Value sub(const Value& a, const Value& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
        }
    });
}

Value mul(const Value& a, const Value& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= b->value[i];
    return make_node(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor& g = n.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
        }
        if (n.parents[1]->requires_grad) {
            Tensor& g = n.parents[1]->ensure_grad();
            for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
        }
    });
}

Value scale(const Value& a, double s) {
    Tensor out = a->value;
    out.scale_(s);
    return make_node(std::move(out), {a}, [s](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] += s * n.grad[i];
    });
}

Value relu(const Value& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::max(0.0, out[i]);
    return make_node(std::move(out), {a}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) {
            if (av[i] > 0.0) g[i] += n.grad[i];
        }
    });
}

Value exp(const Value& a) {
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::exp(out[i]);
    return make_node(std::move(out), {a}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * n.value[i];
    });
}

Value mul_const(const Value& a, Tensor weights) {
    if (!a->value.same_shape(weights)) throw std::invalid_argument("mul_const: shape mismatch");
    Tensor out = a->value;
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= weights[i];
    auto w = std::make_shared<Tensor>(std::move(weights));
    return make_node(std::move(out), {a}, [w](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * (*w)[i];
    });
}

Value reshape(const Value& a, std::vector<int> shape) {
    Tensor out(std::move(shape), a->value.vec());
    return make_node(std::move(out), {a}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::int64_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    });
}

Value select_rows(const Value& a, std::vector<int> rows) {
    if (a->value.ndim() != 2) throw std::invalid_argument("select_rows: expects rank-2 input");
    int d = a->value.dim(1);
    Tensor out({static_cast<int>(rows.size()), d});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (int j = 0; j < d; ++j) out.at(static_cast<int>(r), j) = a->value.at(rows[r], j);
    }
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    return make_node(std::move(out), {a}, [idx, d](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        for (std::size_t r = 0; r < idx->size(); ++r) {
            for (int j = 0; j < d; ++j) {
                g.at((*idx)[r], j) += n.grad.at(static_cast<int>(r), j);
            }
        }
    });
}

Value concat_scalars(const std::vector<Value>& scalars) {
    Tensor out({static_cast<int>(scalars.size())});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i]->value.size() != 1) throw std::invalid_argument("concat_scalars: non-scalar input");
        out[static_cast<std::int64_t>(i)] = scalars[i]->value[0];
    }
    std::vector<Value> parents(scalars.begin(), scalars.end());
    return make_node(std::move(out), std::move(parents), [](Node& n) {
        for (std::size_t i = 0; i < n.parents.size(); ++i) {
            auto& p = n.parents[i];
            if (!p->requires_grad) continue;
            p->ensure_grad()[0] += n.grad[static_cast<std::int64_t>(i)];
        }
    });
}

Value matmul(const Value& a, const Value& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(1) != b->value.dim(0)) {
        throw std::invalid_argument("matmul: incompatible shapes " + a->value.shape_str() + " x " +
                                    b->value.shape_str());
    }
    int n = a->value.dim(0), k = a->value.dim(1), m = b->value.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            double av = a->value.at(i, kk);
            if (av == 0.0) continue;
            for (int j = 0; j < m; ++j) out.at(i, j) += av * b->value.at(kk, j);
        }
    }
    return make_node(std::move(out), {a, b}, [n, k, m](Node& node) {
        const Tensor& av = node.parents[0]->value;
        const Tensor& bv = node.parents[1]->value;
        if (node.parents[0]->requires_grad) {
            Tensor& ga = node.parents[0]->ensure_grad();
            // dA = dOut * B^T
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < m; ++j) {
                    double gv = node.grad.at(i, j);
                    if (gv == 0.0) continue;
                    for (int kk = 0; kk < k; ++kk) ga.at(i, kk) += gv * bv.at(kk, j);
                }
            }
        }
        if (node.parents[1]->requires_grad) {
            Tensor& gb = node.parents[1]->ensure_grad();
            // dB = A^T * dOut
            for (int i = 0; i < n; ++i) {
                for (int kk = 0; kk < k; ++kk) {
                    double av2 = av.at(i, kk);
                    if (av2 == 0.0) continue;
                    for (int j = 0; j < m; ++j) gb.at(kk, j) += av2 * node.grad.at(i, j);
                }
            }
        }
    });
}

Value matmul_tn(const Value& a, const Value& b) {
    if (a->value.ndim() != 2 || b->value.ndim() != 2 || a->value.dim(0) != b->value.dim(0)) {
        throw std::invalid_argument("matmul_tn: incompatible shapes");
    }
    int k = a->value.dim(0), n = a->value.dim(1), m = b->value.dim(1);
    Tensor out({n, m});
    for (int kk = 0; kk < k; ++kk) {
        for (int i = 0; i < n; ++i) {
            double av = a->value.at(kk, i);
            if (av == 0.0) continue;
            for (int j = 0; j < m; ++j) out.at(i, j) += av * b->value.at(kk, j);
        }
    }
    return make_node(std::move(out), {a, b}, [k, n, m](Node& node) {
        const Tensor& av = node.parents[0]->value;
        const Tensor& bv = node.parents[1]->value;
        if (node.parents[0]->requires_grad) {
            Tensor& ga = node.parents[0]->ensure_grad();
            // out = A^T B  =>  dA = B * dOut^T
            for (int kk = 0; kk < k; ++kk) {
                for (int i = 0; i < n; ++i) {
                    double s = 0.0;
                    for (int j = 0; j < m; ++j) s += bv.at(kk, j) * node.grad.at(i, j);
                    ga.at(kk, i) += s;
                }
            }
        }
        if (node.parents[1]->requires_grad) {
            Tensor& gb = node.parents[1]->ensure_grad();
            // dB = A * dOut
            for (int kk = 0; kk < k; ++kk) {
                for (int j = 0; j < m; ++j) {
                    double s = 0.0;
                    for (int i = 0; i < n; ++i) s += av.at(kk, i) * node.grad.at(i, j);
                    gb.at(kk, j) += s;
                }
            }
        }
    });
}

Value add_rowvec(const Value& a, const Value& v) {
    if (a->value.ndim() != 2 || v->value.ndim() != 1 || a->value.dim(1) != v->value.dim(0)) {
        throw std::invalid_argument("add_rowvec: incompatible shapes");
    }
    int n = a->value.dim(0), d = a->value.dim(1);
    Tensor out = a->value;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) out.at(i, j) += v->value[j];
    }
    return make_node(std::move(out), {a, v}, [n, d](Node& node) {
        if (node.parents[0]->requires_grad) {
            Tensor& g = node.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i];
        }
        if (node.parents[1]->requires_grad) {
            Tensor& g = node.parents[1]->ensure_grad();
            for (int i = 0; i < n; ++i) {
                for (int j = 0; j < d; ++j) g[j] += node.grad.at(i, j);
            }
        }
    });
}

Value sub_colvec(const Value& a, const Value& v) {
    if (a->value.ndim() != 2 || v->value.ndim() != 1 || a->value.dim(0) != v->value.dim(0)) {
        throw std::invalid_argument("sub_colvec: incompatible shapes");
    }
    int n = a->value.dim(0), d = a->value.dim(1);
    Tensor out = a->value;
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) out.at(i, j) -= v->value[i];
    }
    return make_node(std::move(out), {a, v}, [n, d](Node& node) {
        if (node.parents[0]->requires_grad) {
            Tensor& g = node.parents[0]->ensure_grad();
            for (std::int64_t i = 0; i < node.grad.size(); ++i) g[i] += node.grad[i];
        }
        if (node.parents[1]->requires_grad) {
            Tensor& g = node.parents[1]->ensure_grad();
            for (int i = 0; i < n; ++i) {
                double s = 0.0;
                for (int j = 0; j < d; ++j) s += node.grad.at(i, j);
                g[i] -= s;
            }
        }
    });
}

Value sum_all(const Value& a) {
    Tensor out = Tensor::scalar(a->value.sum());
    return make_node(std::move(out), {a}, [](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        double gv = n.grad[0];
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
}

Value mean_all(const Value& a) {
    double inv = a->value.size() > 0 ? 1.0 / static_cast<double>(a->value.size()) : 0.0;
    Tensor out = Tensor::scalar(a->value.sum() * inv);
    return make_node(std::move(out), {a}, [inv](Node& n) {
        Tensor& g = n.parents[0]->ensure_grad();
        double gv = n.grad[0] * inv;
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += gv;
    });
}

Value mean_rows(const Value& a) {
    if (a->value.ndim() != 2) throw std::invalid_argument("mean_rows: expects rank-2 input");
    int n = a->value.dim(0), d = a->value.dim(1);
    Tensor out({d});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < d; ++j) out[j] += a->value.at(i, j);
    }
    out.scale_(1.0 / n);
    return make_node(std::move(out), {a}, [n, d](Node& node) {
        Tensor& g = node.parents[0]->ensure_grad();
        double inv = 1.0 / n;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < d; ++j) g.at(i, j) += node.grad[j] * inv;
        }
    });
}

Value logsumexp_rows(const Value& a) {
    if (a->value.ndim() != 2) throw std::invalid_argument("logsumexp_rows: expects rank-2 input");
    int n = a->value.dim(0), c = a->value.dim(1);
    Tensor out({n});
    for (int i = 0; i < n; ++i) {
        double m = a->value.at(i, 0);
        for (int j = 1; j < c; ++j) m = std::max(m, a->value.at(i, j));
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += std::exp(a->value.at(i, j) - m);
        out[i] = m + std::log(s);
    }
    return make_node(std::move(out), {a}, [n, c](Node& node) {
        // d lse / d a_ij = softmax(a_i)_j
        const Tensor& av = node.parents[0]->value;
        Tensor& g = node.parents[0]->ensure_grad();
        for (int i = 0; i < n; ++i) {
            double lse = node.value[i];
            double gv = node.grad[i];
            for (int j = 0; j < c; ++j) g.at(i, j) += gv * std::exp(av.at(i, j) - lse);
        }
    });
}

Value pairwise_sqdist(const Value& x, const Value& y) {
    if (x->value.ndim() != 2 || y->value.ndim() != 2 || x->value.dim(1) != y->value.dim(1)) {
        throw std::invalid_argument("pairwise_sqdist: incompatible shapes");
    }
    int n = x->value.dim(0), m = y->value.dim(0), d = x->value.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < m; ++j) {
            double s = 0.0;
            for (int kk = 0; kk < d; ++kk) {
                double diff = x->value.at(i, kk) - y->value.at(j, kk);
                s += diff * diff;
            }
            out.at(i, j) = s;
        }
    }
    return make_node(std::move(out), {x, y}, [n, m, d](Node& node) {
        const Tensor& xv = node.parents[0]->value;
        const Tensor& yv = node.parents[1]->value;
        bool gx = node.parents[0]->requires_grad;
        bool gy = node.parents[1]->requires_grad;
        Tensor* gxa = gx ? &node.parents[0]->ensure_grad() : nullptr;
        Tensor* gya = gy ? &node.parents[1]->ensure_grad() : nullptr;
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < m; ++j) {
                double gv = node.grad.at(i, j);
                if (gv == 0.0) continue;
                for (int kk = 0; kk < d; ++kk) {
                    double diff = xv.at(i, kk) - yv.at(j, kk);
                    if (gx) gxa->at(i, kk) += 2.0 * gv * diff;
                    if (gy) gya->at(j, kk) -= 2.0 * gv * diff;
                }
            }
        }
    });
}

Value conv2d(const Value& x, const Value& w, const Value& bias, int pad) {
    const Tensor& xv = x->value;
    const Tensor& wv = w->value;
    if (xv.ndim() != 4 || wv.ndim() != 4 || xv.dim(1) != wv.dim(1)) {
        throw std::invalid_argument("conv2d: incompatible shapes");
    }
    int b = xv.dim(0), ic = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    int oc = wv.dim(0), k = wv.dim(2);
    int oh = h + 2 * pad - k + 1, ow = wd + 2 * pad - k + 1;
    if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: kernel larger than padded input");
    Tensor out({b, oc, oh, ow});
    for (int bi = 0; bi < b; ++bi) {
        for (int o = 0; o < oc; ++o) {
            double bv = bias->value[o];
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double s = bv;
                    for (int c = 0; c < ic; ++c) {
                        for (int ky = 0; ky < k; ++ky) {
                            int iy = oy + ky - pad;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < k; ++kx) {
                                int ix = ox + kx - pad;
                                if (ix < 0 || ix >= wd) continue;
                                s += xv.at(bi, c, iy, ix) * wv.at(o, c, ky, kx);
                            }
                        }
                    }
                    out.at(bi, o, oy, ox) = s;
                }
            }
        }
    }
    return make_node(std::move(out), {x, w, bias}, [b, ic, h, wd, oc, k, oh, ow, pad](Node& node) {
        const Tensor& xv = node.parents[0]->value;
        const Tensor& wv = node.parents[1]->value;
        bool need_x = node.parents[0]->requires_grad;
        bool need_w = node.parents[1]->requires_grad;
        bool need_b = node.parents[2]->requires_grad;
        Tensor* gx = need_x ? &node.parents[0]->ensure_grad() : nullptr;
        Tensor* gw = need_w ? &node.parents[1]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &node.parents[2]->ensure_grad() : nullptr;
        for (int bi = 0; bi < b; ++bi) {
            for (int o = 0; o < oc; ++o) {
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        double gv = node.grad.at(bi, o, oy, ox);
                        if (gv == 0.0) continue;
                        if (need_b) (*gb)[o] += gv;
                        for (int c = 0; c < ic; ++c) {
                            for (int ky = 0; ky < k; ++ky) {
                                int iy = oy + ky - pad;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    int ix = ox + kx - pad;
                                    if (ix < 0 || ix >= wd) continue;
                                    if (need_w) gw->at(o, c, ky, kx) += gv * xv.at(bi, c, iy, ix);
                                    if (need_x) gx->at(bi, c, iy, ix) += gv * wv.at(o, c, ky, kx);
                                }
                            }
                        }
                    }
                }
            }
        }
    });
}

Value avg_pool2x2(const Value& x) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("avg_pool2x2: expects rank-4 input");
    int b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    int oh = h / 2, ow = w / 2;
    if (oh < 1 || ow < 1) throw std::invalid_argument("avg_pool2x2: input too small");
    Tensor out({b, c, oh, ow});
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    out.at(bi, ci, oy, ox) =
                        0.25 * (xv.at(bi, ci, 2 * oy, 2 * ox) + xv.at(bi, ci, 2 * oy, 2 * ox + 1) +
                                xv.at(bi, ci, 2 * oy + 1, 2 * ox) + xv.at(bi, ci, 2 * oy + 1, 2 * ox + 1));
                }
            }
        }
    }
    return make_node(std::move(out), {x}, [b, c, oh, ow](Node& node) {
        Tensor& g = node.parents[0]->ensure_grad();
        for (int bi = 0; bi < b; ++bi) {
            for (int ci = 0; ci < c; ++ci) {
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        double gv = 0.25 * node.grad.at(bi, ci, oy, ox);
                        g.at(bi, ci, 2 * oy, 2 * ox) += gv;
                        g.at(bi, ci, 2 * oy, 2 * ox + 1) += gv;
                        g.at(bi, ci, 2 * oy + 1, 2 * ox) += gv;
                        g.at(bi, ci, 2 * oy + 1, 2 * ox + 1) += gv;
                    }
                }
            }
        }
    });
}

Value global_avg_pool(const Value& x) {
    const Tensor& xv = x->value;
    if (xv.ndim() != 4) throw std::invalid_argument("global_avg_pool: expects rank-4 input");
    int b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    Tensor out({b, c});
    double inv = 1.0 / (static_cast<double>(h) * w);
    for (int bi = 0; bi < b; ++bi) {
        for (int ci = 0; ci < c; ++ci) {
            double s = 0.0;
            for (int y = 0; y < h; ++y) {
                for (int xx = 0; xx < w; ++xx) s += xv.at(bi, ci, y, xx);
            }
            out.at(bi, ci) = s * inv;
        }
    }
    return make_node(std::move(out), {x}, [b, c, h, w, inv](Node& node) {
        Tensor& g = node.parents[0]->ensure_grad();
        for (int bi = 0; bi < b; ++bi) {
            for (int ci = 0; ci < c; ++ci) {
                double gv = node.grad.at(bi, ci) * inv;
                for (int y = 0; y < h; ++y) {
                    for (int xx = 0; xx < w; ++xx) g.at(bi, ci, y, xx) += gv;
                }
            }
        }
    });
}

namespace {

// Decomposes a BN input as [outer, channels, inner]; returns inner size.
std::int64_t bn_inner_size(const Tensor& x, int channels) {
    if (x.ndim() == 2) {
        if (x.dim(1) != channels) throw std::invalid_argument("batchnorm: channel mismatch");
        return 1;
    }
    if (x.ndim() == 4) {
        if (x.dim(1) != channels) throw std::invalid_argument("batchnorm: channel mismatch");
        return static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    }
    throw std::invalid_argument("batchnorm: expects rank-2 or rank-4 input");
}

}  // namespace

Value batchnorm_train(const Value& x, const Value& gamma, const Value& beta, int channels,
                      double eps, Tensor* batch_mean, Tensor* batch_var) {
    const Tensor& xv = x->value;
    std::int64_t inner = bn_inner_size(xv, channels);
    int outer = xv.dim(0);
    std::int64_t count = static_cast<std::int64_t>(outer) * inner;

    Tensor mean({channels}), var({channels});
    for (int o = 0; o < outer; ++o) {
        for (int c = 0; c < channels; ++c) {
            const double* base = xv.data() + (static_cast<std::int64_t>(o) * channels + c) * inner;
            double s = 0.0;
            for (std::int64_t i = 0; i < inner; ++i) s += base[i];
            mean[c] += s;
        }
    }
    mean.scale_(1.0 / static_cast<double>(count));
    for (int o = 0; o < outer; ++o) {
        for (int c = 0; c < channels; ++c) {
            const double* base = xv.data() + (static_cast<std::int64_t>(o) * channels + c) * inner;
            double s = 0.0;
            for (std::int64_t i = 0; i < inner; ++i) {
                double d = base[i] - mean[c];
                s += d * d;
            }
            var[c] += s;
        }
    }
    var.scale_(1.0 / static_cast<double>(count));
    if (batch_mean) *batch_mean = mean;
    if (batch_var) *batch_var = var;

    Tensor invstd({channels});
    for (int c = 0; c < channels; ++c) invstd[c] = 1.0 / std::sqrt(var[c] + eps);

    Tensor out(xv.shape());
    Tensor xhat(xv.shape());
    for (int o = 0; o < outer; ++o) {
        for (int c = 0; c < channels; ++c) {
            std::int64_t off = (static_cast<std::int64_t>(o) * channels + c) * inner;
            double g = gamma->value[c], b = beta->value[c], mu = mean[c], is = invstd[c];
            for (std::int64_t i = 0; i < inner; ++i) {
                double xh = (xv[off + i] - mu) * is;
                xhat[off + i] = xh;
                out[off + i] = g * xh + b;
            }
        }
    }

    auto xhat_p = std::make_shared<Tensor>(std::move(xhat));
    auto invstd_p = std::make_shared<Tensor>(std::move(invstd));
    return make_node(std::move(out), {x, gamma, beta},
                     [outer, channels, inner, count, xhat_p, invstd_p](Node& node) {
        const Tensor& xh = *xhat_p;
        bool need_x = node.parents[0]->requires_grad;
        bool need_g = node.parents[1]->requires_grad;
        bool need_b = node.parents[2]->requires_grad;
        // per-channel sums of dy and dy*xhat
        Tensor sum_dy({channels}), sum_dy_xhat({channels});
        for (int o = 0; o < outer; ++o) {
            for (int c = 0; c < channels; ++c) {
                std::int64_t off = (static_cast<std::int64_t>(o) * channels + c) * inner;
                double s1 = 0.0, s2 = 0.0;
                for (std::int64_t i = 0; i < inner; ++i) {
                    s1 += node.grad[off + i];
                    s2 += node.grad[off + i] * xh[off + i];
                }
                sum_dy[c] += s1;
                sum_dy_xhat[c] += s2;
            }
        }
        if (need_g) {
            Tensor& gg = node.parents[1]->ensure_grad();
            for (int c = 0; c < channels; ++c) gg[c] += sum_dy_xhat[c];
        }
        if (need_b) {
            Tensor& gb = node.parents[2]->ensure_grad();
            for (int c = 0; c < channels; ++c) gb[c] += sum_dy[c];
        }
        if (need_x) {
            Tensor& gx = node.parents[0]->ensure_grad();
            const Tensor& gv = node.parents[1]->value;
            double invn = 1.0 / static_cast<double>(count);
            for (int o = 0; o < outer; ++o) {
                for (int c = 0; c < channels; ++c) {
                    std::int64_t off = (static_cast<std::int64_t>(o) * channels + c) * inner;
                    double gis = gv[c] * (*invstd_p)[c];
                    for (std::int64_t i = 0; i < inner; ++i) {
                        gx[off + i] += gis * (node.grad[off + i] - invn * sum_dy[c] -
                                              invn * xh[off + i] * sum_dy_xhat[c]);
                    }
                }
            }
        }
    });
}

Value batchnorm_eval(const Value& x, const Value& gamma, const Value& beta, int channels,
                     double eps, const Tensor& running_mean, const Tensor& running_var) {
    const Tensor& xv = x->value;
    std::int64_t inner = bn_inner_size(xv, channels);
    int outer = xv.dim(0);
    Tensor invstd({channels});
    for (int c = 0; c < channels; ++c) invstd[c] = 1.0 / std::sqrt(running_var[c] + eps);

    Tensor out(xv.shape());
    for (int o = 0; o < outer; ++o) {
        for (int c = 0; c < channels; ++c) {
            std::int64_t off = (static_cast<std::int64_t>(o) * channels + c) * inner;
            double g = gamma->value[c], b = beta->value[c], mu = running_mean[c], is = invstd[c];
            for (std::int64_t i = 0; i < inner; ++i) out[off + i] = g * (xv[off + i] - mu) * is + b;
        }
    }
    auto mean_p = std::make_shared<Tensor>(running_mean);
    auto invstd_p = std::make_shared<Tensor>(std::move(invstd));
    return make_node(std::move(out), {x, gamma, beta},
                     [outer, channels, inner, mean_p, invstd_p](Node& node) {
        const Tensor& xv = node.parents[0]->value;
        bool need_x = node.parents[0]->requires_grad;
        bool need_g = node.parents[1]->requires_grad;
        bool need_b = node.parents[2]->requires_grad;
        Tensor* gx = need_x ? &node.parents[0]->ensure_grad() : nullptr;
        Tensor* gg = need_g ? &node.parents[1]->ensure_grad() : nullptr;
        Tensor* gb = need_b ? &node.parents[2]->ensure_grad() : nullptr;
        const Tensor& gv = node.parents[1]->value;
        for (int o = 0; o < outer; ++o) {
            for (int c = 0; c < channels; ++c) {
                std::int64_t off = (static_cast<std::int64_t>(o) * channels + c) * inner;
                double is = (*invstd_p)[c], mu = (*mean_p)[c];
                for (std::int64_t i = 0; i < inner; ++i) {
                    double dy = node.grad[off + i];
                    if (gx) (*gx)[off + i] += dy * gv[c] * is;
                    if (gg) (*gg)[c] += dy * (xv[off + i] - mu) * is;
                    if (gb) (*gb)[c] += dy;
                }
            }
        }
    });
}

void backward(const Value& root) {
    if (root->value.size() != 1) throw std::invalid_argument("backward: root must be scalar");
    std::vector<Node*> topo;
    std::unordered_set<Node*> visited;
    // iterative post-order DFS
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
}

double scalar_value(const Value& v) {
    if (v->value.size() != 1) throw std::invalid_argument("scalar_value: not a scalar");
    return v->value[0];
}

}  // namespace pmdg::ad
