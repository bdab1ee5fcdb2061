#include "faqs/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_set>

#include "faqs/errors.hpp"

namespace faqs::ad {

namespace {

using NodePtr = std::shared_ptr<Node>;

Var make_node(std::string_view op, Tensor value, std::vector<NodePtr> inputs,
              std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  node->requires_grad =
      std::any_of(inputs.begin(), inputs.end(), [](const NodePtr& n) { return n->requires_grad; });
  if (node->requires_grad) {
    node->inputs = std::move(inputs);
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

void accumulate(Node& target, const Tensor& g) {
  if (!target.requires_grad) return;
  Tensor& buf = target.grad_buffer();
  auto dst = buf.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void require_rank(const Var& v, std::size_t rank, const char* op, const char* arg) {
  if (v.value().rank() != rank) {
    throw DimensionError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
  }
}

void require_axis(const char* op, const char* what, std::size_t got, std::size_t want) {
  if (got != want) {
    throw DimensionError(std::string(op) + ": axis '" + what + "' mismatch (" + std::to_string(got) + " vs " +
                         std::to_string(want) + ")");
  }
}

enum class Broadcast { Same, LeftScalar, RightScalar };

Broadcast broadcast_kind(const Var& a, const Var& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::Same;
  if (a.value().is_scalar() && a.value().rank() == 0) return Broadcast::LeftScalar;
  if (b.value().is_scalar() && b.value().rank() == 0) return Broadcast::RightScalar;
  throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                       " are not broadcast-compatible");
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (!has_grad) {
    grad = Tensor(value.shape(), 0.0);
    has_grad = true;
  }
  return grad;
}

void Var::zero_grad() {
  if (node_->has_grad) node_->grad.fill(0.0);
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->op = "parameter";
  return Var(std::move(node));
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = "constant";
  return Var(std::move(node));
}

Var scalar_constant(double v) { return constant(Tensor::scalar(v)); }

void backward(const Var& loss) {
  if (!loss.value().is_scalar()) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  visited.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->has_grad) node->backward(*node);
  }
}

Var add(const Var& a, const Var& b) {
  const Broadcast kind = broadcast_kind(a, b, "add");
  const Tensor& big = kind == Broadcast::LeftScalar ? b.value() : a.value();
  Tensor out = big;
  if (kind == Broadcast::Same) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  } else {
    const double s = kind == Broadcast::LeftScalar ? a.value()[0] : b.value()[0];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += s;
  }
  return make_node("add", std::move(out), {a.ptr(), b.ptr()}, [kind](Node& n) {
    Node& lhs = *n.inputs[0];
    Node& rhs = *n.inputs[1];
    auto reduce_into = [&](Node& scalar_side) {
      if (!scalar_side.requires_grad) return;
      double s = 0.0;
      for (double g : n.grad.data()) s += g;
      scalar_side.grad_buffer()[0] += s;
    };
    if (kind == Broadcast::Same) {
      accumulate(lhs, n.grad);
      accumulate(rhs, n.grad);
    } else if (kind == Broadcast::LeftScalar) {
      reduce_into(lhs);
      accumulate(rhs, n.grad);
    } else {
      accumulate(lhs, n.grad);
      reduce_into(rhs);
    }
  });
}

Var sub(const Var& a, const Var& b) { return add(a, scalar_mul(b, -1.0)); }

Var mul(const Var& a, const Var& b) {
  const Broadcast kind = broadcast_kind(a, b, "mul");
  const Tensor& big = kind == Broadcast::LeftScalar ? b.value() : a.value();
  Tensor out = big;
  if (kind == Broadcast::Same) {
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  } else {
    const double s = kind == Broadcast::LeftScalar ? a.value()[0] : b.value()[0];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= s;
  }
  return make_node("mul", std::move(out), {a.ptr(), b.ptr()}, [kind](Node& n) {
    Node& lhs = *n.inputs[0];
    Node& rhs = *n.inputs[1];
    const auto g = n.grad.data();
    if (kind == Broadcast::Same) {
      if (lhs.requires_grad) {
        auto dst = lhs.grad_buffer().data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * rhs.value[i];
      }
      if (rhs.requires_grad) {
        auto dst = rhs.grad_buffer().data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * lhs.value[i];
      }
      return;
    }
    Node& sc = kind == Broadcast::LeftScalar ? lhs : rhs;
    Node& tn = kind == Broadcast::LeftScalar ? rhs : lhs;
    const double s = sc.value[0];
    if (tn.requires_grad) {
      auto dst = tn.grad_buffer().data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * s;
    }
    if (sc.requires_grad) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * tn.value[i];
      sc.grad_buffer()[0] += acc;
    }
  });
}

Var scalar_mul(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v *= s;
  return make_node("scalar_mul", std::move(out), {a.ptr()}, [s](Node& n) {
    Node& in = *n.inputs[0];
    auto dst = in.grad_buffer().data();
    const auto g = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.data()) v += s;
  return make_node("add_scalar", std::move(out), {a.ptr()}, [](Node& n) { accumulate(*n.inputs[0], n.grad); });
}

Var relu6(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = std::min(std::max(v, 0.0), 6.0);
  return make_node("relu6", std::move(out), {x.ptr()}, [](Node& n) {
    Node& in = *n.inputs[0];
    auto dst = in.grad_buffer().data();
    const auto g = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const double v = in.value[i];
      if (v > 0.0 && v < 6.0) dst[i] += g[i];
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = 1.0 / (1.0 + std::exp(-v));
  return make_node("sigmoid", std::move(out), {x.ptr()}, [](Node& n) {
    Node& in = *n.inputs[0];
    auto dst = in.grad_buffer().data();
    const auto g = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) {
      const double s = n.value[i];
      dst[i] += g[i] * s * (1.0 - s);
    }
  });
}

Var mask(const Var& x, std::shared_ptr<const Tensor> m) {
  if (m->shape() != x.shape()) {
    throw DimensionError("mask: shape " + shape_str(m->shape()) + " vs input " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= (*m)[i];
  return make_node("mask", std::move(out), {x.ptr()}, [m = std::move(m)](Node& n) {
    Node& in = *n.inputs[0];
    auto dst = in.grad_buffer().data();
    const auto g = n.grad.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * (*m)[i];
  });
}

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_node("sum", Tensor::scalar(s), {x.ptr()}, [](Node& n) {
    Node& in = *n.inputs[0];
    const double g = n.grad[0];
    for (double& d : in.grad_buffer().data()) d += g;
  });
}

Var squared_l2(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v * v;
  return make_node("squared_l2", Tensor::scalar(s), {x.ptr()}, [](Node& n) {
    Node& in = *n.inputs[0];
    const double g = n.grad[0];
    auto dst = in.grad_buffer().data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += 2.0 * g * in.value[i];
  });
}

Var straight_through(const Var& x, Tensor forward) {
  if (forward.shape() != x.shape()) {
    throw DimensionError("straight_through: forward value " + shape_str(forward.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  return make_node("straight_through", std::move(forward), {x.ptr()},
                   [](Node& n) { accumulate(*n.inputs[0], n.grad); });
}

Var conv2d_pointwise(const Var& input, const Var& weight) {
  require_rank(input, 4, "conv2d_pointwise", "input");
  require_rank(weight, 4, "conv2d_pointwise", "weight");
  const std::size_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2], W = input.shape()[3];
  const std::size_t Co = weight.shape()[0];
  require_axis("conv2d_pointwise", "in_channels", weight.shape()[1], C);
  require_axis("conv2d_pointwise", "kernel_h", weight.shape()[2], 1);
  require_axis("conv2d_pointwise", "kernel_w", weight.shape()[3], 1);
  const std::size_t P = H * W;

  Tensor out(Shape{N, Co, H, W}, 0.0);
  const auto x = input.value().data();
  const auto w = weight.value().data();
  auto y = out.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < Co; ++o) {
      double* yrow = y.data() + (n * Co + o) * P;
      for (std::size_t c = 0; c < C; ++c) {
        const double wv = w[o * C + c];
        if (wv == 0.0) continue;
        const double* xrow = x.data() + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) yrow[p] += wv * xrow[p];
      }
    }
  }
  return make_node("conv2d_pointwise", std::move(out), {input.ptr(), weight.ptr()},
                   [N, C, Co, P](Node& nd) {
                     Node& in = *nd.inputs[0];
                     Node& wt = *nd.inputs[1];
                     const auto g = nd.grad.data();
                     const auto x = in.value.data();
                     const auto w = wt.value.data();
                     if (in.requires_grad) {
                       auto dx = in.grad_buffer().data();
                       for (std::size_t n = 0; n < N; ++n) {
                         for (std::size_t o = 0; o < Co; ++o) {
                           const double* grow = g.data() + (n * Co + o) * P;
                           for (std::size_t c = 0; c < C; ++c) {
                             const double wv = w[o * C + c];
                             if (wv == 0.0) continue;
                             double* dxrow = dx.data() + (n * C + c) * P;
                             for (std::size_t p = 0; p < P; ++p) dxrow[p] += wv * grow[p];
                           }
                         }
                       }
                     }
                     if (wt.requires_grad) {
                       auto dw = wt.grad_buffer().data();
                       for (std::size_t n = 0; n < N; ++n) {
                         for (std::size_t o = 0; o < Co; ++o) {
                           const double* grow = g.data() + (n * Co + o) * P;
                           for (std::size_t c = 0; c < C; ++c) {
                             const double* xrow = x.data() + (n * C + c) * P;
                             double acc = 0.0;
                             for (std::size_t p = 0; p < P; ++p) acc += grow[p] * xrow[p];
                             dw[o * C + c] += acc;
                           }
                         }
                       }
                     }
                   });
}

Var conv2d_pointwise(const Var& input, const Var& weight, const Var& bias) {
  const Var conv = conv2d_pointwise(input, weight);
  require_rank(bias, 1, "conv2d_pointwise", "bias");
  require_axis("conv2d_pointwise", "out_channels", bias.shape()[0], weight.shape()[0]);
  return affine_channel(conv, constant(Tensor(Shape{bias.shape()[0]}, 1.0)), bias);
}

Var conv2d_depthwise(const Var& input, const Var& weight, int stride) {
  require_rank(input, 4, "conv2d_depthwise", "input");
  require_rank(weight, 3, "conv2d_depthwise", "weight");
  const std::size_t K = weight.shape()[1];
  if (K % 2 == 0) throw ConfigError("conv2d_depthwise: kernel size must be odd, got " + std::to_string(K));
  if (weight.shape()[2] != K) throw DimensionError("conv2d_depthwise: axis 'kernel_w' must equal kernel_h");
  if (stride != 1 && stride != 2) throw ConfigError("conv2d_depthwise: stride must be 1 or 2");
  const std::size_t N = input.shape()[0], C = input.shape()[1], H = input.shape()[2], W = input.shape()[3];
  require_axis("conv2d_depthwise", "channels", weight.shape()[0], C);
  const std::size_t S = static_cast<std::size_t>(stride);
  const std::size_t Ho = (H + S - 1) / S, Wo = (W + S - 1) / S;
  const long pad = static_cast<long>(K - 1) / 2;

  Tensor out(Shape{N, C, Ho, Wo}, 0.0);
  const auto x = input.value().data();
  const auto w = weight.value().data();
  auto y = out.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const double* xc = x.data() + (n * C + c) * H * W;
      const double* wc = w.data() + c * K * K;
      double* yc = y.data() + (n * C + c) * Ho * Wo;
      for (std::size_t i = 0; i < K; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
          const double wv = wc[i * K + j];
          if (wv == 0.0) continue;
          for (std::size_t oh = 0; oh < Ho; ++oh) {
            const long ih = static_cast<long>(oh * S + i) - pad;
            if (ih < 0 || ih >= static_cast<long>(H)) continue;
            const double* xrow = xc + static_cast<std::size_t>(ih) * W;
            double* yrow = yc + oh * Wo;
            for (std::size_t ow = 0; ow < Wo; ++ow) {
              const long iw = static_cast<long>(ow * S + j) - pad;
              if (iw < 0 || iw >= static_cast<long>(W)) continue;
              yrow[ow] += wv * xrow[iw];
            }
          }
        }
      }
    }
  }
  return make_node(
      "conv2d_depthwise", std::move(out), {input.ptr(), weight.ptr()},
      [N, C, H, W, K, S, Ho, Wo, pad](Node& nd) {
        Node& in = *nd.inputs[0];
        Node& wt = *nd.inputs[1];
        const auto g = nd.grad.data();
        const auto x = in.value.data();
        const auto w = wt.value.data();
        double* dx = in.requires_grad ? in.grad_buffer().data().data() : nullptr;
        double* dw = wt.requires_grad ? wt.grad_buffer().data().data() : nullptr;
        for (std::size_t n = 0; n < N; ++n) {
          for (std::size_t c = 0; c < C; ++c) {
            const double* xc = x.data() + (n * C + c) * H * W;
            const double* gc = g.data() + (n * C + c) * Ho * Wo;
            for (std::size_t i = 0; i < K; ++i) {
              for (std::size_t j = 0; j < K; ++j) {
                const double wv = w[c * K * K + i * K + j];
                double acc = 0.0;
                for (std::size_t oh = 0; oh < Ho; ++oh) {
                  const long ih = static_cast<long>(oh * S + i) - pad;
                  if (ih < 0 || ih >= static_cast<long>(H)) continue;
                  const std::size_t xoff = static_cast<std::size_t>(ih) * W;
                  for (std::size_t ow = 0; ow < Wo; ++ow) {
                    const long iw = static_cast<long>(ow * S + j) - pad;
                    if (iw < 0 || iw >= static_cast<long>(W)) continue;
                    const double gv = gc[oh * Wo + ow];
                    acc += gv * xc[xoff + static_cast<std::size_t>(iw)];
                    if (dx) dx[(n * C + c) * H * W + xoff + static_cast<std::size_t>(iw)] += gv * wv;
                  }
                }
                if (dw) dw[c * K * K + i * K + j] += acc;
              }
            }
          }
        }
      });
}

Var affine_channel(const Var& input, const Var& scale, const Var& shift) {
  require_rank(input, 4, "affine_channel", "input");
  const std::size_t N = input.shape()[0], C = input.shape()[1];
  const std::size_t P = input.shape()[2] * input.shape()[3];
  require_axis("affine_channel", "scale_channels", scale.numel(), C);
  require_axis("affine_channel", "shift_channels", shift.numel(), C);
  Tensor out = input.value();
  const auto a = scale.value().data();
  const auto b = shift.value().data();
  auto y = out.data();
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      double* row = y.data() + (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) row[p] = a[c] * row[p] + b[c];
    }
  }
  return make_node("affine_channel", std::move(out), {input.ptr(), scale.ptr(), shift.ptr()},
                   [N, C, P](Node& nd) {
                     Node& in = *nd.inputs[0];
                     Node& sc = *nd.inputs[1];
                     Node& sh = *nd.inputs[2];
                     const auto g = nd.grad.data();
                     const auto x = in.value.data();
                     double* dx = in.requires_grad ? in.grad_buffer().data().data() : nullptr;
                     double* da = sc.requires_grad ? sc.grad_buffer().data().data() : nullptr;
                     double* db = sh.requires_grad ? sh.grad_buffer().data().data() : nullptr;
                     for (std::size_t n = 0; n < N; ++n) {
                       for (std::size_t c = 0; c < C; ++c) {
                         const std::size_t off = (n * C + c) * P;
                         const double a = sc.value[c];
                         double ga = 0.0, gb = 0.0;
                         for (std::size_t p = 0; p < P; ++p) {
                           ga += g[off + p] * x[off + p];
                           gb += g[off + p];
                           if (dx) dx[off + p] += g[off + p] * a;
                         }
                         if (da) da[c] += ga;
                         if (db) db[c] += gb;
                       }
                     }
                   });
}

Var global_avg_pool(const Var& input) {
  require_rank(input, 4, "global_avg_pool", "input");
  const std::size_t N = input.shape()[0], C = input.shape()[1];
  const std::size_t P = input.shape()[2] * input.shape()[3];
  Tensor out(Shape{N, C}, 0.0);
  const auto x = input.value().data();
  for (std::size_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    for (std::size_t p = 0; p < P; ++p) s += x[nc * P + p];
    out[nc] = s / static_cast<double>(P);
  }
  return make_node("global_avg_pool", std::move(out), {input.ptr()}, [N, C, P](Node& nd) {
    Node& in = *nd.inputs[0];
    auto dx = in.grad_buffer().data();
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const double g = nd.grad[nc] / static_cast<double>(P);
      for (std::size_t p = 0; p < P; ++p) dx[nc * P + p] += g;
    }
  });
}

Var dense(const Var& x, const Var& weight, const Var& bias) {
  require_rank(x, 2, "dense", "input");
  require_rank(weight, 2, "dense", "weight");
  const std::size_t N = x.shape()[0], F = x.shape()[1], O = weight.shape()[0];
  require_axis("dense", "features", weight.shape()[1], F);
  require_axis("dense", "outputs", bias.numel(), O);
  Tensor out(Shape{N, O}, 0.0);
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < O; ++o) {
      double acc = bias.value()[o];
      for (std::size_t f = 0; f < F; ++f) acc += weight.value()[o * F + f] * x.value()[n * F + f];
      out[n * O + o] = acc;
    }
  }
  return make_node("dense", std::move(out), {x.ptr(), weight.ptr(), bias.ptr()}, [N, F, O](Node& nd) {
    Node& in = *nd.inputs[0];
    Node& wt = *nd.inputs[1];
    Node& bs = *nd.inputs[2];
    double* dx = in.requires_grad ? in.grad_buffer().data().data() : nullptr;
    double* dw = wt.requires_grad ? wt.grad_buffer().data().data() : nullptr;
    double* db = bs.requires_grad ? bs.grad_buffer().data().data() : nullptr;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t o = 0; o < O; ++o) {
        const double g = nd.grad[n * O + o];
        if (db) db[o] += g;
        for (std::size_t f = 0; f < F; ++f) {
          if (dx) dx[n * F + f] += g * wt.value[o * F + f];
          if (dw) dw[o * F + f] += g * in.value[n * F + f];
        }
      }
    }
  });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t N = logits.shape()[0], K = logits.shape()[1];
  require_axis("softmax_cross_entropy", "batch", labels.size(), N);
  Tensor probs(Shape{N, K}, 0.0);
  std::vector<int> y(labels.begin(), labels.end());
  double loss = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    if (y[n] < 0 || static_cast<std::size_t>(y[n]) >= K) {
      throw DataError("softmax_cross_entropy: label " + std::to_string(y[n]) + " outside [0, " +
                      std::to_string(K) + ")");
    }
    const double* row = logits.value().data().data() + n * K;
    const double mx = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = std::exp(row[k] - mx) / z;
    loss += -(row[y[n]] - mx - std::log(z));
  }
  loss /= static_cast<double>(N);
  return make_node("softmax_cross_entropy", Tensor::scalar(loss), {logits.ptr()},
                   [N, K, probs = std::move(probs), y = std::move(y)](Node& nd) {
                     Node& in = *nd.inputs[0];
                     auto dx = in.grad_buffer().data();
                     const double g = nd.grad[0] / static_cast<double>(N);
                     for (std::size_t n = 0; n < N; ++n) {
                       for (std::size_t k = 0; k < K; ++k) {
                         const double onehot = static_cast<std::size_t>(y[n]) == k ? 1.0 : 0.0;
                         dx[n * K + k] += g * (probs[n * K + k] - onehot);
                       }
                     }
                   });
}

}  // namespace faqs::ad
