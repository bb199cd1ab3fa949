#include "mdmrl/tape.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace mdmrl {

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

} // namespace

void Tape::clear() {
    nodes_.clear();
    has_grads_ = false;
}

NodeId Tape::push(Tensor value, std::function<void()> back) {
    Node n;
    n.value = std::move(value);
    if (recording_) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::leaf(const Tensor& v) { return push(v, {}); }

NodeId Tape::constant(Tensor v) { return push(std::move(v), {}); }

NodeId Tape::scalar(double v) { return push(Tensor::scalar(v), {}); }

double Tape::value_scalar(NodeId id) const {
    const Tensor& t = nodes_[id].value;
    require(t.is_scalar(), "Tape::value_scalar: node is not scalar");
    return t.data[0];
}

const Tensor& Tape::grad(NodeId id) const {
    if (!has_grads_) throw std::logic_error("Tape::grad: backward() has not run");
    return nodes_[id].grad;
}

NodeId Tape::add(NodeId a, NodeId b) {
    require(value(a).same_shape(value(b)), "add: shape mismatch");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] += vb.data[i];
    return push(std::move(out), [this, a, b, id = size()] {
        for (std::size_t i = 0; i < g(a).numel(); ++i) {
            g(a).data[i] += nodes_[static_cast<NodeId>(id)].grad.data[i];
            g(b).data[i] += nodes_[static_cast<NodeId>(id)].grad.data[i];
        }
    });
}

NodeId Tape::sub(NodeId a, NodeId b) {
    require(value(a).same_shape(value(b)), "sub: shape mismatch");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] -= vb.data[i];
    return push(std::move(out), [this, a, b, id = size()] {
        for (std::size_t i = 0; i < g(a).numel(); ++i) {
            g(a).data[i] += nodes_[static_cast<NodeId>(id)].grad.data[i];
            g(b).data[i] -= nodes_[static_cast<NodeId>(id)].grad.data[i];
        }
    });
}

NodeId Tape::mul(NodeId a, NodeId b) {
    require(value(a).same_shape(value(b)), "mul: shape mismatch");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] *= vb.data[i];
    return push(std::move(out), [this, a, b, id = size()] {
        const Tensor& go = nodes_[static_cast<NodeId>(id)].grad;
        for (std::size_t i = 0; i < go.numel(); ++i) {
            g(a).data[i] += go.data[i] * value(b).data[i];
            g(b).data[i] += go.data[i] * value(a).data[i];
        }
    });
}

NodeId Tape::scale(NodeId a, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v *= c;
    return push(std::move(out), [this, a, c, id = size()] {
        const Tensor& go = nodes_[static_cast<NodeId>(id)].grad;
        for (std::size_t i = 0; i < go.numel(); ++i) g(a).data[i] += c * go.data[i];
    });
}

NodeId Tape::add_scalar(NodeId a, double c) {
    Tensor out = value(a);
    for (double& v : out.data) v += c;
    return push(std::move(out), [this, a, id = size()] {
        const Tensor& go = nodes_[static_cast<NodeId>(id)].grad;
        for (std::size_t i = 0; i < go.numel(); ++i) g(a).data[i] += go.data[i];
    });
}

NodeId Tape::matmul(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.rank() == 2 && vb.rank() == 2, "matmul: operands must be 2-D");
    require(va.shape[1] == vb.shape[0], "matmul: inner dimensions differ");
    std::size_t R = va.shape[0], K = va.shape[1], C = vb.shape[1];
    Tensor out({R, C});
    for (std::size_t i = 0; i < R; ++i) {
        const double* arow = va.data.data() + i * K;
        double* orow = out.data.data() + i * C;
        for (std::size_t k = 0; k < K; ++k) {
            double av = arow[k];
            const double* brow = vb.data.data() + k * C;
            for (std::size_t j = 0; j < C; ++j) orow[j] += av * brow[j];
        }
    }
    return push(std::move(out), [this, a, b, R, K, C, id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        const double* va_ = value(a).data.data();
        const double* vb_ = value(b).data.data();
        double* ga = g(a).data.data();
        double* gb = g(b).data.data();
        // dA = dC * B^T
        for (std::size_t i = 0; i < R; ++i) {
            for (std::size_t k = 0; k < K; ++k) {
                double acc = 0.0;
                const double* grow = go + i * C;
                const double* brow = vb_ + k * C;
                for (std::size_t j = 0; j < C; ++j) acc += grow[j] * brow[j];
                ga[i * K + k] += acc;
            }
        }
        // dB = A^T * dC
        for (std::size_t k = 0; k < K; ++k) {
            for (std::size_t i = 0; i < R; ++i) {
                double av = va_[i * K + k];
                const double* grow = go + i * C;
                double* gbrow = gb + k * C;
                for (std::size_t j = 0; j < C; ++j) gbrow[j] += av * grow[j];
            }
        }
    });
}

NodeId Tape::vecmat(NodeId v, NodeId m) {
    const Tensor& vv = value(v);
    const Tensor& vm = value(m);
    require(vv.rank() == 1 && vm.rank() == 2, "vecmat: expects vector and matrix");
    require(vv.shape[0] == vm.shape[0], "vecmat: dimensions differ");
    std::size_t K = vm.shape[0], C = vm.shape[1];
    Tensor out({C});
    for (std::size_t k = 0; k < K; ++k) {
        double av = vv.data[k];
        const double* mrow = vm.data.data() + k * C;
        for (std::size_t j = 0; j < C; ++j) out.data[j] += av * mrow[j];
    }
    return push(std::move(out), [this, v, m, K, C, id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        const double* vv_ = value(v).data.data();
        const double* vm_ = value(m).data.data();
        for (std::size_t k = 0; k < K; ++k) {
            double acc = 0.0;
            const double* mrow = vm_ + k * C;
            double* gmrow = g(m).data.data() + k * C;
            for (std::size_t j = 0; j < C; ++j) {
                acc += go[j] * mrow[j];
                gmrow[j] += vv_[k] * go[j];
            }
            g(v).data[k] += acc;
        }
    });
}

NodeId Tape::add_rowvec(NodeId m, NodeId v) {
    const Tensor& vm = value(m);
    const Tensor& vv = value(v);
    require(vm.rank() == 2 && vv.rank() == 1, "add_rowvec: expects matrix and vector");
    require(vm.shape[1] == vv.shape[0], "add_rowvec: column count differs");
    std::size_t R = vm.shape[0], C = vm.shape[1];
    Tensor out = vm;
    for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t j = 0; j < C; ++j) out.data[i * C + j] += vv.data[j];
    }
    return push(std::move(out), [this, m, v, R, C, id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        for (std::size_t i = 0; i < R; ++i) {
            for (std::size_t j = 0; j < C; ++j) {
                g(m).data[i * C + j] += go[i * C + j];
                g(v).data[j] += go[i * C + j];
            }
        }
    });
}

NodeId Tape::broadcast_row(NodeId v, std::size_t rows) {
    const Tensor& vv = value(v);
    require(vv.rank() == 1, "broadcast_row: expects vector");
    std::size_t C = vv.shape[0];
    Tensor out({rows, C});
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < C; ++j) out.data[i * C + j] = vv.data[j];
    }
    return push(std::move(out), [this, v, rows, C, id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < C; ++j) g(v).data[j] += go[i * C + j];
        }
    });
}

NodeId Tape::mean_rows(NodeId m) {
    const Tensor& vm = value(m);
    require(vm.rank() == 2, "mean_rows: expects matrix");
    std::size_t R = vm.shape[0], C = vm.shape[1];
    Tensor out({C});
    for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t j = 0; j < C; ++j) out.data[j] += vm.data[i * C + j];
    }
    for (double& x : out.data) x /= static_cast<double>(R);
    return push(std::move(out), [this, m, R, C, id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        double inv = 1.0 / static_cast<double>(R);
        for (std::size_t i = 0; i < R; ++i) {
            for (std::size_t j = 0; j < C; ++j) g(m).data[i * C + j] += go[j] * inv;
        }
    });
}

NodeId Tape::embed_row(NodeId table, std::size_t row) {
    const Tensor& vt = value(table);
    require(vt.rank() == 2, "embed_row: expects matrix table");
    require(row < vt.shape[0], "embed_row: row index out of range");
    std::size_t C = vt.shape[1];
    Tensor out({C});
    std::copy_n(vt.data.data() + row * C, C, out.data.data());
    return push(std::move(out), [this, table, row, C, id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        for (std::size_t j = 0; j < C; ++j) g(table).data[row * C + j] += go[j];
    });
}

NodeId Tape::embed_rows(NodeId table, const std::vector<int>& rows) {
    const Tensor& vt = value(table);
    require(vt.rank() == 2, "embed_rows: expects matrix table");
    std::size_t C = vt.shape[1];
    Tensor out({rows.size(), C});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && static_cast<std::size_t>(rows[i]) < vt.shape[0],
                "embed_rows: row index out of range");
        std::copy_n(vt.data.data() + static_cast<std::size_t>(rows[i]) * C, C,
                    out.data.data() + i * C);
    }
    return push(std::move(out), [this, table, rows, C, id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double* grow = g(table).data.data() + static_cast<std::size_t>(rows[i]) * C;
            for (std::size_t j = 0; j < C; ++j) grow[j] += go[i * C + j];
        }
    });
}

NodeId Tape::select_entries(NodeId m, const std::vector<std::pair<int, int>>& entries) {
    const Tensor& vm = value(m);
    require(vm.rank() == 2, "select_entries: expects matrix");
    std::size_t R = vm.shape[0], C = vm.shape[1];
    Tensor out({entries.size()});
    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto [r, c] = entries[i];
        require(r >= 0 && static_cast<std::size_t>(r) < R && c >= 0 &&
                    static_cast<std::size_t>(c) < C,
                "select_entries: index out of range");
        out.data[i] = vm.data[static_cast<std::size_t>(r) * C + static_cast<std::size_t>(c)];
    }
    return push(std::move(out), [this, m, entries, C, id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        for (std::size_t i = 0; i < entries.size(); ++i) {
            auto [r, c] = entries[i];
            g(m).data[static_cast<std::size_t>(r) * C + static_cast<std::size_t>(c)] += go[i];
        }
    });
}

NodeId Tape::select_rows(NodeId m, const std::vector<int>& rows) {
    const Tensor& vm = value(m);
    require(vm.rank() == 2, "select_rows: expects matrix");
    std::size_t C = vm.shape[1];
    Tensor out({rows.size(), C});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && static_cast<std::size_t>(rows[i]) < vm.shape[0],
                "select_rows: row index out of range");
        std::copy_n(vm.data.data() + static_cast<std::size_t>(rows[i]) * C, C,
                    out.data.data() + i * C);
    }
    return push(std::move(out), [this, m, rows, C, id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            double* grow = g(m).data.data() + static_cast<std::size_t>(rows[i]) * C;
            for (std::size_t j = 0; j < C; ++j) grow[j] += go[i * C + j];
        }
    });
}

NodeId Tape::concat(NodeId a, NodeId b) {
    const Tensor& va = value(a);
    const Tensor& vb = value(b);
    require(va.rank() == 1 && vb.rank() == 1, "concat: expects vectors");
    Tensor out({va.numel() + vb.numel()});
    std::copy(va.data.begin(), va.data.end(), out.data.begin());
    std::copy(vb.data.begin(), vb.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(va.numel()));
    return push(std::move(out), [this, a, b, na = va.numel(), id = size()] {
        const double* go = nodes_[static_cast<NodeId>(id)].grad.data.data();
        for (std::size_t i = 0; i < g(a).numel(); ++i) g(a).data[i] += go[i];
        for (std::size_t i = 0; i < g(b).numel(); ++i) g(b).data[i] += go[na + i];
    });
}

NodeId Tape::tanh(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::tanh(v);
    return push(std::move(out), [this, a, id = size()] {
        const Tensor& o = nodes_[static_cast<NodeId>(id)].value;
        const Tensor& go = nodes_[static_cast<NodeId>(id)].grad;
        for (std::size_t i = 0; i < go.numel(); ++i) {
            g(a).data[i] += go.data[i] * (1.0 - o.data[i] * o.data[i]);
        }
    });
}

NodeId Tape::exp(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::exp(v);
    return push(std::move(out), [this, a, id = size()] {
        const Tensor& o = nodes_[static_cast<NodeId>(id)].value;
        const Tensor& go = nodes_[static_cast<NodeId>(id)].grad;
        for (std::size_t i = 0; i < go.numel(); ++i) g(a).data[i] += go.data[i] * o.data[i];
    });
}

NodeId Tape::log(NodeId a) {
    Tensor out = value(a);
    for (double& v : out.data) v = std::log(v);
    return push(std::move(out), [this, a, id = size()] {
        const Tensor& go = nodes_[static_cast<NodeId>(id)].grad;
        for (std::size_t i = 0; i < go.numel(); ++i) {
            g(a).data[i] += go.data[i] / value(a).data[i];
        }
    });
}

NodeId Tape::log_softmax_rows(NodeId a, double temperature) {
    require(temperature > 0.0, "log_softmax_rows: temperature must be positive");
    const Tensor& va = value(a);
    std::size_t C = va.cols();
    std::size_t R = va.numel() / C;
    Tensor out = va;
    for (std::size_t i = 0; i < R; ++i) {
        std::span<const double> row(va.data.data() + i * C, C);
        auto ls = log_softmax(row, temperature);
        std::copy(ls.begin(), ls.end(), out.data.begin() + static_cast<std::ptrdiff_t>(i * C));
    }
    return push(std::move(out), [this, a, R, C, temperature, id = size()] {
        // dx_j = (dy_j - softmax_j * sum_k dy_k) / tau
        const Tensor& o = nodes_[static_cast<NodeId>(id)].value;
        const Tensor& go = nodes_[static_cast<NodeId>(id)].grad;
        for (std::size_t i = 0; i < R; ++i) {
            double gsum = 0.0;
            for (std::size_t j = 0; j < C; ++j) gsum += go.data[i * C + j];
            for (std::size_t j = 0; j < C; ++j) {
                double p = std::exp(o.data[i * C + j]);
                g(a).data[i * C + j] += (go.data[i * C + j] - p * gsum) / temperature;
            }
        }
    });
}

NodeId Tape::sum(NodeId a) {
    double total = 0.0;
    for (double v : value(a).data) total += v;
    return push(Tensor::scalar(total), [this, a, id = size()] {
        double go = nodes_[static_cast<NodeId>(id)].grad.data[0];
        for (double& gv : g(a).data) gv += go;
    });
}

NodeId Tape::mean(NodeId a) {
    std::size_t n = value(a).numel();
    double total = 0.0;
    for (double v : value(a).data) total += v;
    return push(Tensor::scalar(total / static_cast<double>(n)), [this, a, n, id = size()] {
        double go = nodes_[static_cast<NodeId>(id)].grad.data[0] / static_cast<double>(n);
        for (double& gv : g(a).data) gv += go;
    });
}

NodeId Tape::minimum(NodeId a, NodeId b) {
    require(value(a).same_shape(value(b)), "minimum: shape mismatch");
    Tensor out = value(a);
    const Tensor& vb = value(b);
    for (std::size_t i = 0; i < out.numel(); ++i) out.data[i] = std::min(out.data[i], vb.data[i]);
    return push(std::move(out), [this, a, b, id = size()] {
        // Subgradient: route to the smaller operand, ties to the first.
        const Tensor& go = nodes_[static_cast<NodeId>(id)].grad;
        for (std::size_t i = 0; i < go.numel(); ++i) {
            if (value(a).data[i] <= value(b).data[i]) {
                g(a).data[i] += go.data[i];
            } else {
                g(b).data[i] += go.data[i];
            }
        }
    });
}

NodeId Tape::clamp(NodeId a, double lo, double hi) {
    require(lo <= hi, "clamp: lo must not exceed hi");
    Tensor out = value(a);
    for (double& v : out.data) v = std::min(std::max(v, lo), hi);
    return push(std::move(out), [this, a, lo, hi, id = size()] {
        const Tensor& go = nodes_[static_cast<NodeId>(id)].grad;
        for (std::size_t i = 0; i < go.numel(); ++i) {
            double x = value(a).data[i];
            if (x > lo && x < hi) g(a).data[i] += go.data[i];
        }
    });
}

NodeId Tape::interp_row(NodeId table, double x01) {
    const Tensor& vt = value(table);
    require(vt.rank() == 2 && vt.shape[0] >= 1, "interp_row: expects non-empty matrix");
    require(x01 >= 0.0 && x01 <= 1.0, "interp_row: position outside [0, 1]");
    std::size_t last = vt.shape[0] - 1;
    double x = x01 * static_cast<double>(last);
    auto i0 = static_cast<std::size_t>(x);
    if (i0 > last) i0 = last;
    std::size_t i1 = std::min(i0 + 1, last);
    double f = x - static_cast<double>(i0);
    if (i0 == i1 || f == 0.0) return embed_row(table, i0);
    return add(scale(embed_row(table, i0), 1.0 - f), scale(embed_row(table, i1), f));
}

void Tape::backward(NodeId loss_node) {
    if (!recording_) throw std::logic_error("Tape::backward: tape is not recording");
    require(loss_node < nodes_.size(), "backward: unknown node");
    if (!nodes_[loss_node].value.is_scalar()) {
        throw std::invalid_argument("Tape::backward: loss must be scalar");
    }
    for (Node& n : nodes_) {
        n.grad = Tensor(n.value.shape);
    }
    nodes_[loss_node].grad.data[0] = 1.0;
    has_grads_ = true;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (i <= loss_node && nodes_[i].back) nodes_[i].back();
    }
}

} // namespace mdmrl
