#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "mdmrl/tensor.hpp"

namespace mdmrl {

using NodeId = std::uint32_t;

/// Reverse-mode autodiff over tensor-granularity primitives. Nodes are
/// created in topological order, so backward() is a single reverse sweep.
/// A non-recording tape computes identical values through the same code
/// paths but skips closure creation; backward() is then unavailable.
class Tape {
  public:
    explicit Tape(bool recording = true) : recording_(recording) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return recording_; }
    std::size_t size() const { return nodes_.size(); }
    void clear();

    NodeId leaf(const Tensor& v);
    NodeId constant(Tensor v);
    NodeId scalar(double v);

    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId a, double c);
    NodeId add_scalar(NodeId a, double c);
    NodeId matmul(NodeId a, NodeId b);
    NodeId vecmat(NodeId v, NodeId m);
    NodeId add_rowvec(NodeId m, NodeId v);
    NodeId broadcast_row(NodeId v, std::size_t rows);
    NodeId mean_rows(NodeId m);
    NodeId embed_row(NodeId table, std::size_t row);
    NodeId embed_rows(NodeId table, const std::vector<int>& rows);
    NodeId select_entries(NodeId m, const std::vector<std::pair<int, int>>& entries);
    NodeId select_rows(NodeId m, const std::vector<int>& rows);
    NodeId concat(NodeId a, NodeId b);
    NodeId tanh(NodeId a);
    NodeId exp(NodeId a);
    NodeId log(NodeId a);
    NodeId log_softmax_rows(NodeId a, double temperature);
    NodeId sum(NodeId a);
    NodeId mean(NodeId a);
    NodeId minimum(NodeId a, NodeId b);
    NodeId clamp(NodeId a, double lo, double hi);

    const Tensor& value(NodeId id) const { return nodes_[id].value; }
    double value_scalar(NodeId id) const;
    /// Gradient of the last backward() target with respect to node `id`.
    const Tensor& grad(NodeId id) const;

    /// Populate gradients of every node reachable from `loss_node`
    /// (unreachable nodes keep zero gradient). Loss must be scalar.
    void backward(NodeId loss_node);

  private:
  public:
    /// Row of `table` at fractional position x01 * (rows - 1), linearly
    /// interpolated between the two neighbouring rows. x01 must be in [0,1].
    NodeId interp_row(NodeId table, double x01);

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> back; // empty for leaves/constants or when not recording
    };

    NodeId push(Tensor value, std::function<void()> back);
    Tensor& g(NodeId id) { return nodes_[id].grad; }

    std::vector<Node> nodes_;
    bool recording_;
    bool has_grads_ = false;
};

} // namespace mdmrl
