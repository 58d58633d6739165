#include "deconf/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace deconf::diffcore {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                              " vs " + b.shape_str());
}

Value make_op(Tensor value, std::vector<NodePtr> parents, std::function<void(Node&)> bw) {
  Value v;
  v.node_ = std::make_shared<Node>();
  v.node_->value = std::move(value);
  v.node_->parents = std::move(parents);
  v.node_->backward_fn = std::move(bw);
  return v;
}

}  // namespace

void Value::backward() const {
  if (!node_ || node_->value.size() != 1)
    throw std::invalid_argument("backward: root must be a defined scalar");

  // iterative post-order DFS
  std::vector<Node*> topo;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : topo) {
    if (n->grad.empty()) n->grad = Tensor::zeros(n->value.shape());
  }
  node_->grad[0] += 1.0;

  // topo is post-order, so reverse iteration is reverse-topological
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

Value add(const Value& a, const Value& b) {
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  if (ta.same_shape(tb)) {
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
    return make_op(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
      Tensor& ga = self.parents[0]->grad;
      Tensor& gb = self.parents[1]->grad;
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        ga[i] += self.grad[i];
        gb[i] += self.grad[i];
      }
    });
  }
  // {r,c} + {c} broadcast over rows
  if (ta.rank() == 2 && tb.rank() == 1 && ta.cols() == tb.size()) {
    Tensor out = ta;
    for (std::size_t r = 0; r < ta.rows(); ++r)
      for (std::size_t c = 0; c < ta.cols(); ++c) out.at(r, c) += tb[c];
    return make_op(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
      Tensor& ga = self.parents[0]->grad;
      Tensor& gb = self.parents[1]->grad;
      std::size_t rows = self.value.rows(), cols = self.value.cols();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
          ga[r * cols + c] += self.grad[r * cols + c];
          gb[c] += self.grad[r * cols + c];
        }
    });
  }
  shape_error("add", ta, tb);
}

Value sub(const Value& a, const Value& b) { return add(a, scale(b, -1.0)); }

Value mul(const Value& a, const Value& b) {
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  if (!ta.same_shape(tb)) shape_error("mul", ta, tb);
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
  return make_op(std::move(out), {a.ptr(), b.ptr()}, [](Node& self) {
    const Tensor& va = self.parents[0]->value;
    const Tensor& vb = self.parents[1]->value;
    Tensor& ga = self.parents[0]->grad;
    Tensor& gb = self.parents[1]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      ga[i] += self.grad[i] * vb[i];
      gb[i] += self.grad[i] * va[i];
    }
  });
}

Value scale(const Value& a, double c) {
  Tensor out = a.val();
  for (auto& x : out.vec()) x *= c;
  return make_op(std::move(out), {a.ptr()}, [c](Node& self) {
    Tensor& ga = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += c * self.grad[i];
  });
}

Value matmul(const Value& a, const Value& b) {
  const Tensor& ta = a.val();
  const Tensor& tb = b.val();
  if (ta.rank() != 2 || tb.rank() != 2 || ta.cols() != tb.rows()) shape_error("matmul", ta, tb);
  std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double av = ta[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * tb[p * n + j];
    }
  return make_op(std::move(out), {a.ptr(), b.ptr()}, [m, k, n](Node& self) {
    const Tensor& va = self.parents[0]->value;
    const Tensor& vb = self.parents[1]->value;
    Tensor& ga = self.parents[0]->grad;
    Tensor& gb = self.parents[1]->grad;
    // dA = g . B^T ; dB = A^T . g
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double g = self.grad[i * n + j];
        if (g == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) {
          ga[i * k + p] += g * vb[p * n + j];
          gb[p * n + j] += va[i * k + p] * g;
        }
      }
  });
}

Value matvec(const Value& m, const Value& v) {
  const Tensor& tm = m.val();
  const Tensor& tv = v.val();
  if (tm.rank() != 2 || tv.rank() != 1 || tm.cols() != tv.size()) shape_error("matvec", tm, tv);
  std::size_t rows = tm.rows(), cols = tm.cols();
  Tensor out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += tm[r * cols + c] * tv[c];
    out[r] = acc;
  }
  return make_op(std::move(out), {m.ptr(), v.ptr()}, [rows, cols](Node& self) {
    const Tensor& vm = self.parents[0]->value;
    const Tensor& vv = self.parents[1]->value;
    Tensor& gm = self.parents[0]->grad;
    Tensor& gv = self.parents[1]->grad;
    for (std::size_t r = 0; r < rows; ++r) {
      double g = self.grad[r];
      if (g == 0.0) continue;
      for (std::size_t c = 0; c < cols; ++c) {
        gm[r * cols + c] += g * vv[c];
        gv[c] += g * vm[r * cols + c];
      }
    }
  });
}

Value vecmat(const Value& v, const Value& m) {
  const Tensor& tv = v.val();
  const Tensor& tm = m.val();
  if (tv.rank() != 1 || tm.rank() != 2 || tv.size() != tm.rows()) shape_error("vecmat", tv, tm);
  std::size_t rows = tm.rows(), cols = tm.cols();
  Tensor out({cols});
  for (std::size_t r = 0; r < rows; ++r) {
    double x = tv[r];
    if (x == 0.0) continue;
    for (std::size_t c = 0; c < cols; ++c) out[c] += x * tm[r * cols + c];
  }
  return make_op(std::move(out), {v.ptr(), m.ptr()}, [rows, cols](Node& self) {
    const Tensor& vv = self.parents[0]->value;
    const Tensor& vm = self.parents[1]->value;
    Tensor& gv = self.parents[0]->grad;
    Tensor& gm = self.parents[1]->grad;
    for (std::size_t r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        acc += self.grad[c] * vm[r * cols + c];
        gm[r * cols + c] += vv[r] * self.grad[c];
      }
      gv[r] += acc;
    }
  });
}

Value tanh(const Value& a) {
  Tensor out = a.val();
  for (auto& x : out.vec()) x = std::tanh(x);
  return make_op(std::move(out), {a.ptr()}, [](Node& self) {
    Tensor& ga = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      ga[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
  });
}

Value sigmoid(const Value& a) {
  Tensor out = a.val();
  for (auto& x : out.vec()) x = 1.0 / (1.0 + std::exp(-x));
  return make_op(std::move(out), {a.ptr()}, [](Node& self) {
    Tensor& ga = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      ga[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
  });
}

namespace {

Value softmax_impl(const Value& a, const std::vector<unsigned char>* keep) {
  const Tensor& ta = a.val();
  if (ta.rank() != 1) throw std::invalid_argument("softmax: expects rank-1, got " + ta.shape_str());
  if (keep && keep->size() != ta.size())
    throw std::invalid_argument("masked_softmax: mask length does not match input");
  Tensor out(ta.shape());
  double mx = -1e300;
  bool any = false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (keep && !(*keep)[i]) continue;
    any = true;
    mx = std::max(mx, ta[i]);
  }
  if (!any) throw std::invalid_argument("masked_softmax: all positions masked");
  double z = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (keep && !(*keep)[i]) continue;
    out[i] = std::exp(ta[i] - mx);
    z += out[i];
  }
  for (std::size_t i = 0; i < ta.size(); ++i) out[i] /= z;
  return make_op(std::move(out), {a.ptr()}, [](Node& self) {
    // dx_i = y_i * (g_i - sum_j g_j y_j); masked entries have y_i = 0
    Tensor& ga = self.parents[0]->grad;
    double dot = 0.0;
    for (std::size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * self.value[i];
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      ga[i] += self.value[i] * (self.grad[i] - dot);
  });
}

}  // namespace

Value softmax(const Value& a) { return softmax_impl(a, nullptr); }

Value masked_softmax(const Value& a, const std::vector<unsigned char>& keep) {
  return softmax_impl(a, &keep);
}

Value concat(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::size_t total = 0;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> sizes;
  for (const Value& p : parts) {
    if (p.val().rank() != 1) throw std::invalid_argument("concat: expects rank-1 parts");
    total += p.val().size();
    sizes.push_back(p.val().size());
    parents.push_back(p.ptr());
  }
  Tensor out({total});
  std::size_t off = 0;
  for (const Value& p : parts) {
    for (std::size_t i = 0; i < p.val().size(); ++i) out[off + i] = p.val()[i];
    off += p.val().size();
  }
  return make_op(std::move(out), std::move(parents), [sizes](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      Tensor& g = self.parents[k]->grad;
      for (std::size_t i = 0; i < sizes[k]; ++i) g[i] += self.grad[off + i];
      off += sizes[k];
    }
  });
}

Value element(const Value& a, std::size_t index) {
  if (index >= a.val().size())
    throw std::invalid_argument("element: index " + std::to_string(index) +
                                " out of range for " + a.val().shape_str());
  return make_op(Tensor::scalar(a.val()[index]), {a.ptr()}, [index](Node& self) {
    self.parents[0]->grad[index] += self.grad[0];
  });
}

Value stack_rows(const std::vector<Value>& rows) {
  if (rows.empty()) throw std::invalid_argument("stack_rows: no inputs");
  std::size_t d = rows[0].val().size();
  std::vector<NodePtr> parents;
  Tensor out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].val().rank() != 1 || rows[r].val().size() != d)
      shape_error("stack_rows", rows[0].val(), rows[r].val());
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = rows[r].val()[c];
    parents.push_back(rows[r].ptr());
  }
  return make_op(std::move(out), std::move(parents), [d](Node& self) {
    for (std::size_t r = 0; r < self.parents.size(); ++r) {
      Tensor& g = self.parents[r]->grad;
      for (std::size_t c = 0; c < d; ++c) g[c] += self.grad[r * d + c];
    }
  });
}

Value sum(const Value& a) {
  double acc = 0.0;
  for (double x : a.val().vec()) acc += x;
  return make_op(Tensor::scalar(acc), {a.ptr()}, [](Node& self) {
    Tensor& ga = self.parents[0]->grad;
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[0];
  });
}

Value mean(const Value& a) {
  std::size_t n = a.val().size();
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Value add_scalars(const std::vector<Value>& terms) {
  if (terms.empty()) throw std::invalid_argument("add_scalars: no inputs");
  double acc = 0.0;
  std::vector<NodePtr> parents;
  for (const Value& t : terms) {
    if (t.val().size() != 1) throw std::invalid_argument("add_scalars: expects scalars");
    acc += t.val()[0];
    parents.push_back(t.ptr());
  }
  return make_op(Tensor::scalar(acc), std::move(parents), [](Node& self) {
    for (auto& p : self.parents) p->grad[0] += self.grad[0];
  });
}

Value dropout(const Value& a, double rate, RngStream& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return a;
  double keep_scale = 1.0 / (1.0 - rate);
  std::vector<unsigned char> keep(a.val().size());
  for (auto& k : keep) k = rng.uniform() >= rate ? 1 : 0;
  Tensor out = a.val();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep[i] ? out[i] * keep_scale : 0.0;
  return make_op(std::move(out), {a.ptr()}, [keep, keep_scale](Node& self) {
    Tensor& ga = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i)
      if (keep[i]) ga[i] += self.grad[i] * keep_scale;
  });
}

Value embedding_lookup(const Value& table, const std::vector<int>& ids) {
  const Tensor& t = table.val();
  if (t.rank() != 2) throw std::invalid_argument("embedding_lookup: table must be rank-2");
  std::size_t d = t.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= t.rows())
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) +
                              " out of range for table " + t.shape_str());
    for (std::size_t c = 0; c < d; ++c) out[i * d + c] = t[ids[i] * d + c];
  }
  return make_op(std::move(out), {table.ptr()}, [ids, d](Node& self) {
    Tensor& gt = self.parents[0]->grad;
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) gt[ids[i] * d + c] += self.grad[i * d + c];
  });
}

Value cross_entropy(const Value& logits, std::size_t target) {
  const Tensor& t = logits.val();
  if (t.rank() != 1 || target >= t.size())
    throw std::invalid_argument("cross_entropy: bad logits shape or target index");
  double mx = *std::max_element(t.vec().begin(), t.vec().end());
  double z = 0.0;
  for (double x : t.vec()) z += std::exp(x - mx);
  double loss = -(t[target] - mx - std::log(z));
  return make_op(Tensor::scalar(loss), {logits.ptr()}, [target, mx, z](Node& self) {
    // d/dlogits = softmax - onehot(target)
    const Tensor& lv = self.parents[0]->value;
    Tensor& gl = self.parents[0]->grad;
    for (std::size_t i = 0; i < lv.size(); ++i) {
      double sm = std::exp(lv[i] - mx) / z;
      gl[i] += self.grad[0] * (sm - (i == target ? 1.0 : 0.0));
    }
  });
}

Value bce_per_label(const Value& logits, const std::vector<double>& targets) {
  const Tensor& t = logits.val();
  if (t.rank() != 1 || t.size() != targets.size())
    throw std::invalid_argument("bce_per_label: logits/targets length mismatch");
  // stable sum_i [ max(z,0) - z*y + log(1 + exp(-|z|)) ]
  double loss = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    double z = t[i];
    loss += std::max(z, 0.0) - z * targets[i] + std::log1p(std::exp(-std::fabs(z)));
  }
  return make_op(Tensor::scalar(loss), {logits.ptr()}, [targets](Node& self) {
    const Tensor& lv = self.parents[0]->value;
    Tensor& gl = self.parents[0]->grad;
    for (std::size_t i = 0; i < lv.size(); ++i) {
      double s = 1.0 / (1.0 + std::exp(-lv[i]));
      gl[i] += self.grad[0] * (s - targets[i]);
    }
  });
}

Value grl(const Value& x, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("grl: lambda must be >= 0");
  Tensor out = x.val();
  return make_op(std::move(out), {x.ptr()}, [lambda](Node& self) {
    Tensor& gx = self.parents[0]->grad;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += -lambda * self.grad[i];
  });
}

Value gru_cell(const Value& x, const Value& h_prev, const GruParams& p) {
  Value z = sigmoid(add(add(matvec(p.wz, x), matvec(p.uz, h_prev)), p.bz));
  Value r = sigmoid(add(add(matvec(p.wr, x), matvec(p.ur, h_prev)), p.br));
  Value h_cand = tanh(add(add(matvec(p.wh, x), matvec(p.uh, mul(r, h_prev))), p.bh));
  // h' = (1 - z) * h_prev + z * h_cand
  return add(sub(h_prev, mul(z, h_prev)), mul(z, h_cand));
}

Value attention_pool(const Value& rows, const AttentionParams& p,
                     const std::vector<unsigned char>& keep) {
  Value u = tanh(add(matmul(rows, p.proj_w), p.proj_b));  // {n,a}
  Value scores = matvec(u, p.context);                    // {n}
  Value alpha = masked_softmax(scores, keep);
  return vecmat(alpha, rows);                             // {d}
}

Adam::Adam(std::vector<Value> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Value& p : params_) {
    m_.emplace_back(Tensor::zeros(p.val().shape()));
    v_.emplace_back(Tensor::zeros(p.val().shape()));
  }
}

void Adam::zero_grad() {
  for (const Value& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& theta = params_[k].val();
    const Tensor& g = params_[k].grad();
    if (g.empty()) continue;  // parameter not touched by this graph
    for (std::size_t i = 0; i < theta.size(); ++i) {
      if (!std::isfinite(g[i]))
        throw std::runtime_error("adam: non-finite gradient in parameter '" +
                                 params_[k].name() + "'");
      m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
      v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
      double mhat = m_[k][i] / bc1;
      double vhat = v_[k][i] / bc2;
      theta[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

double check_gradients(const std::function<Value()>& f,
                       const std::vector<Value>& params, double h) {
  for (const Value& p : params) p.zero_grad();
  Value root = f();
  root.backward();
  std::vector<Tensor> analytic;
  for (const Value& p : params) analytic.push_back(p.grad());

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& theta = params[k].node()->value;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      double keep = theta[i];
      theta[i] = keep + h;
      double up = f().val()[0];
      theta[i] = keep - h;
      double dn = f().val()[0];
      theta[i] = keep;
      double numeric = (up - dn) / (2.0 * h);
      double a = analytic[k][i];
      if (!std::isfinite(numeric) || !std::isfinite(a))
        throw std::runtime_error("check_gradients: non-finite value at parameter '" +
                                 params[k].name() + "' coordinate " + std::to_string(i));
      double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace deconf::diffcore
