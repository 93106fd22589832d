#include "ear/autograd.hpp"

#include <algorithm>
#include <atomic>
#include <unordered_map>
#include <unordered_set>

namespace ear {

namespace {
std::atomic<std::uint64_t> next_seq{1};
thread_local bool grad_mode = true;
}  // namespace

bool grad_enabled() { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

std::vector<bool> grad_mask(const std::vector<Tensor>& inputs) {
  std::vector<bool> mask(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) mask[i] = grad_mode && inputs[i].tracks_grad();
  return mask;
}

Tensor record_op(std::string_view name, Shape shape, Buffer output, const std::vector<Tensor>& inputs,
                 BackwardFn backward) {
  return record_op(name, std::move(shape), std::make_shared<Buffer>(std::move(output)), inputs,
                   std::move(backward));
}

Tensor record_op(std::string_view name, Shape shape, std::shared_ptr<Buffer> output,
                 const std::vector<Tensor>& inputs, BackwardFn backward) {
  if (!output->all_finite()) throw NumericError(std::string(name) + " produced a non-finite value");
  if (static_cast<std::int64_t>(output->size()) != shape_numel(shape))
    throw ShapeError(std::string(name) + ": output buffer does not match shape " + shape_str(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(output);
  Tensor out(std::move(impl));
  auto mask = grad_mask(inputs);
  if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) return out;

  auto node = std::make_shared<detail::Node>();
  node->seq = next_seq.fetch_add(1);
  node->name = std::string(name);
  node->input_needs_grad = std::move(mask);
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->grad_fn = std::move(node);
  return out;
}

Graph Graph::collect(const Tensor& root) {
  Graph g;
  if (!root.defined() || !root.impl()->grad_fn) return g;
  std::unordered_set<const detail::Node*> seen;
  std::vector<std::shared_ptr<detail::Node>> stack{root.impl()->grad_fn};
  seen.insert(stack.back().get());
  while (!stack.empty()) {
    auto node = std::move(stack.back());
    stack.pop_back();
    for (const auto& in : node->inputs) {
      if (in && in->grad_fn && seen.insert(in->grad_fn.get()).second) stack.push_back(in->grad_fn);
    }
    g.nodes_.push_back(std::move(node));
  }
  std::sort(g.nodes_.begin(), g.nodes_.end(), [](const auto& a, const auto& b) { return a->seq < b->seq; });
  g.entries_.reserve(g.nodes_.size());
  for (const auto& n : g.nodes_) {
    Entry e{n->seq, n->name, {}};
    for (const auto& in : n->inputs) e.input_seqs.push_back(in && in->grad_fn ? in->grad_fn->seq : 0);
    g.entries_.push_back(std::move(e));
  }
  return g;
}

void backward(const Tensor& loss) {
  if (!loss.defined()) throw GraphError("backward on an undefined tensor");
  if (loss.numel() != 1) throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  const auto& impl = loss.impl();
  if (!impl->grad_fn) {
    if (!impl->requires_grad) throw GraphError("loss is detached from any recorded graph");
    Buffer one(loss.dtype(), 1);
    one.set(0, 1.0);
    if (impl->grad)
      impl->grad->add_inplace(one);
    else
      impl->grad = std::move(one);
    return;
  }
  if (impl->grad_fn->consumed) throw GraphError("backward called twice on the same graph; re-run forward first");

  Graph graph = Graph::collect(loss);
  std::unordered_map<const detail::Node*, Buffer> grads;
  Buffer seed(loss.dtype(), 1);
  seed.set(0, 1.0);
  grads.emplace(impl->grad_fn.get(), std::move(seed));

  for (auto it = graph.nodes_.rbegin(); it != graph.nodes_.rend(); ++it) {
    auto& node = *it;
    if (node->consumed) throw GraphError("graph node '" + node->name + "' was already consumed by backward");
    node->consumed = true;
    auto found = grads.find(node.get());
    if (found != grads.end()) {
      Buffer grad_out = std::move(found->second);
      grads.erase(found);
      auto in_grads = node->backward(grad_out);
      for (std::size_t i = 0; i < node->inputs.size(); ++i) {
        if (!node->input_needs_grad[i] || i >= in_grads.size() || in_grads[i].empty()) continue;
        auto& input = node->inputs[i];
        if (input->grad_fn) {
          auto [slot, inserted] = grads.try_emplace(input->grad_fn.get(), std::move(in_grads[i]));
          if (!inserted) slot->second.add_inplace(in_grads[i]);
        } else if (input->requires_grad) {
          if (input->grad)
            input->grad->add_inplace(in_grads[i]);
          else
            input->grad = std::move(in_grads[i]);
        }
      }
    }
    node->backward = nullptr;
    node->inputs.clear();
  }
}

}  // namespace ear
