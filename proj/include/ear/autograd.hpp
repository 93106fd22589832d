#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ear/tensor.hpp"

namespace ear {

/// Receives dLoss/dOutput and returns one gradient per op input; an empty
/// Buffer means "no gradient for this input".
using BackwardFn = std::function<std::vector<Buffer>(const Buffer& grad_output)>;

namespace detail {
struct Node {
  std::uint64_t seq = 0;
  std::string name;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::vector<bool> input_needs_grad;
  BackwardFn backward;
  bool consumed = false;
};
}  // namespace detail

/// Records an op output. Verifies the output is finite (NumericError naming the op)
/// and attaches a tape node when grad mode is on and any input tracks grad.
Tensor record_op(std::string_view name, Shape shape, Buffer output, const std::vector<Tensor>& inputs,
                 BackwardFn backward);
/// Same, but the output tensor adopts `output` as its storage so a backward
/// closure may keep a reference to it without copying.
Tensor record_op(std::string_view name, Shape shape, std::shared_ptr<Buffer> output,
                 const std::vector<Tensor>& inputs, BackwardFn backward);

/// Which inputs of the op currently being recorded will need gradients.
/// Only meaningful for backward closures created inside record_op callers.
std::vector<bool> grad_mask(const std::vector<Tensor>& inputs);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// The tape reachable from one root, in recording order.
class Graph {
 public:
  struct Entry {
    std::uint64_t seq;
    std::string op;
    std::vector<std::uint64_t> input_seqs;  // 0 for leaves
  };

  static Graph collect(const Tensor& root);
  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  std::vector<Entry> entries_;
  friend void backward(const Tensor& loss);
};

/// Reverse-mode sweep from a scalar loss. Each node runs exactly once; leaf
/// gradients accumulate into Tensor::grad(). The tape is released afterwards,
/// so a second call on the same loss raises GraphError.
void backward(const Tensor& loss);

}  // namespace ear
