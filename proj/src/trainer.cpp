#include "vesselseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <numeric>
#include <stdexcept>

#include "checkpoint_io.hpp"
#include "vesselseg/ops.hpp"
#include "vesselseg/rng.hpp"

namespace vseg {

namespace {

std::string stepline(std::size_t step, double loss) {
  char b[64];
  std::snprintf(b, sizeof b, "step %zu loss %.17g\n", step, loss);
  return b;
}

std::string epochline(std::size_t epoch, const MetricsReport& r) {
  char b[128];
  std::snprintf(b, sizeof b, "epoch %zu dice %.17g cldice %.17g betti0 %.17g\n",
                epoch, r.mean_dice(), r.mean_cldice(), r.mean_betti0());
  return b;
}

// trajectory-determining settings, so a resume refuses anything
// inconsistent; the target epoch count may grow between runs
std::string run_stamp(const TrainConfig& cfg, const ModelConfig& mcfg) {
  char b[160];
  std::snprintf(b, sizeof b,
                "lr = %.17g\nbatch = %zu\ntrain_seed = %llu\n"
                "eval_interval = %zu\n",
                cfg.lr, cfg.batch, (unsigned long long)cfg.seed,
                cfg.eval_interval);
  return serialize_config(mcfg) + b;
}

}  // namespace

AdamState init_adam(const std::vector<std::pair<std::string, Tensor>>& params,
                    double lr) {
  AdamState st;
  st.lr = lr;
  for (const auto& [name, t] : params) {
    st.m.emplace_back(t.size(), 0.0);
    st.v.emplace_back(t.size(), 0.0);
  }
  return st;
}

void adam_step(const std::vector<std::pair<std::string, Tensor>>& params,
               AdamState& state) {
  if (params.size() != state.m.size())
    throw std::invalid_argument("adam_step: state built for another model");
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;  // untouched by backward: zero gradient
    for (double g : t.grad())
      if (!std::isfinite(g))
        throw std::runtime_error("adam_step: non-finite gradient in " + name);
  }
  state.t += 1;
  const double c1 = 1.0 - std::pow(state.beta1, (double)state.t);
  const double c2 = 1.0 - std::pow(state.beta2, (double)state.t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& t = params[i].second;
    auto theta = const_cast<Tensor&>(t).values_mut();
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != theta.size())
      throw std::invalid_argument("adam_step: moment extent mismatch in " +
                                  params[i].first);
    const bool has = t.has_grad();
    auto g = has ? t.grad() : std::span<const double>{};
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double gk = has ? g[k] : 0.0;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * gk;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * gk * gk;
      theta[k] -= state.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + state.eps);
    }
  }
}

MetricsReport evaluate(const SegmentationModel& model,
                       const std::vector<Sample>& dataset) {
  if (dataset.empty())
    throw std::invalid_argument("evaluate: empty dataset");
  MetricsReport rep;
  for (const Sample& s : dataset) {
    Tape tape;
    NoGradGuard off(tape);
    Tensor in = ops::reshape(tape, s.image, {1, s.mask.h, s.mask.w});
    Tensor logits = model_forward(tape, model, in);
    Mask pred = mask_from_logits(logits);
    rep.add(dice(pred, s.mask), cldice(pred, s.mask),
            betti0_error(pred, s.mask));
  }
  return rep;
}

namespace {

constexpr const char* kOptT = "opt.t";
constexpr const char* kOptEpoch = "opt.epoch";
constexpr const char* kOptBest = "opt.best";
constexpr const char* kOptBestEpoch = "opt.best_epoch";

void write_resume(const std::string& path, const SegmentationModel& model,
                  const AdamState& st, const std::string& stamp,
                  std::size_t done_epochs, double best,
                  std::size_t best_epoch) {
  ckpt::Container c;
  const auto params = named_params(model);
  for (const auto& [name, t] : params) {
    auto vals = t.values();
    c.tensors.push_back(
        {name, t.shape(), std::vector<double>(vals.begin(), vals.end())});
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    c.tensors.push_back(
        {"opt.m." + params[i].first, params[i].second.shape(), st.m[i]});
    c.tensors.push_back(
        {"opt.v." + params[i].first, params[i].second.shape(), st.v[i]});
  }
  c.tensors.push_back({kOptT, {1}, {(double)st.t}});
  c.tensors.push_back({kOptEpoch, {1}, {(double)done_epochs}});
  c.tensors.push_back({kOptBest, {1}, {best}});
  c.tensors.push_back({kOptBestEpoch, {1}, {(double)best_epoch}});
  c.config = stamp;
  ckpt::write_container(path, c);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const ModelConfig& mcfg,
                  const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set) {
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("train: empty dataset");
  if (cfg.batch == 0) throw std::invalid_argument("train: zero batch size");
  if (cfg.eval_interval == 0)
    throw std::invalid_argument("train: zero eval interval");
  if (cfg.epochs == 0) throw std::invalid_argument("train: zero epochs");

  SegmentationModel model = build_model(mcfg);
  auto params = named_params(model);
  AdamState st = init_adam(params, cfg.lr);
  const std::string stamp = run_stamp(cfg, mcfg);
  const std::string resume_path =
      cfg.checkpoint.empty() ? "" : cfg.checkpoint + ".resume";

  std::size_t start_epoch = 0, best_epoch = 0;
  double best = -1.0;
  if (!resume_path.empty() && std::filesystem::exists(resume_path)) {
    ckpt::Container c = ckpt::read_container(resume_path);
    if (c.config != stamp)
      throw std::runtime_error("train: resume file " + resume_path +
                               " was written by a different run setup");
    std::map<std::string, const ckpt::RawTensor*> by_name;
    for (const auto& t : c.tensors) by_name[t.name] = &t;
    auto scalar = [&](const char* key) {
      auto it = by_name.find(key);
      if (it == by_name.end() || it->second->data.size() != 1)
        throw std::runtime_error(std::string("train: resume file lacks ") +
                                 key);
      return it->second->data[0];
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& [name, t] = params[i];
      for (const std::string& key : {name, "opt.m." + name, "opt.v." + name})
        if (!by_name.count(key) || by_name[key]->data.size() != t.size())
          throw std::runtime_error("train: resume file lacks tensor " + key);
      auto dst = const_cast<Tensor&>(t).values_mut();
      const auto& src = by_name[name]->data;
      std::copy(src.begin(), src.end(), dst.begin());
      st.m[i] = by_name["opt.m." + name]->data;
      st.v[i] = by_name["opt.v." + name]->data;
    }
    st.t = (std::uint64_t)scalar(kOptT);
    start_epoch = (std::size_t)scalar(kOptEpoch);
    best = scalar(kOptBest);
    best_epoch = (std::size_t)scalar(kOptBestEpoch);
  }

  const std::size_t n = train_set.size();
  const std::size_t steps_per_epoch = (n + cfg.batch - 1) / cfg.batch;
  std::size_t step = start_epoch * steps_per_epoch;
  TrainResult res;

  MetricsReport last_eval;
  bool have_eval = false;
  for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(cfg.seed ^ (0x9e3779b97f4a7c15ULL * (epoch + 1)));
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle.below(i + 1)]);

    for (std::size_t at = 0; at < n; at += cfg.batch, ++step) {
      const std::size_t take = std::min(cfg.batch, n - at);
      for (const auto& [name, t] : params) const_cast<Tensor&>(t).zero_grad();
      double loss_val;
      try {
        Tape tape;
        Tensor acc;
        for (std::size_t b = 0; b < take; ++b) {
          const Sample& s = train_set[order[at + b]];
          Tensor in = ops::reshape(tape, s.image, {1, s.mask.h, s.mask.w});
          Tensor mask = Tensor::zeros({1, s.mask.h, s.mask.w});
          auto mv = mask.values_mut();
          for (std::size_t k = 0; k < mv.size(); ++k)
            mv[k] = (double)s.mask.v[k];
          Tensor l =
              segmentation_loss(tape, model_forward(tape, model, in), mask);
          acc = b == 0 ? l : ops::add(tape, acc, l);
        }
        if (take > 1) acc = ops::scale(tape, acc, 1.0 / (double)take);
        loss_val = acc.scalar();
        if (!std::isfinite(loss_val))
          throw std::runtime_error("non-finite loss");
        tape.backward(acc);
        adam_step(params, st);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error("train: diverged at step " +
                                 std::to_string(step) + ": " + e.what());
      }
      res.log += stepline(step, loss_val);
    }

    const std::size_t done = epoch + 1;
    if (done % cfg.eval_interval == 0 || done == cfg.epochs) {
      try {
        last_eval = evaluate(model, val_set);
      } catch (const std::runtime_error& e) {
        // exploded weights usually surface here, in the next forward pass
        throw std::runtime_error("train: diverged at step " +
                                 std::to_string(step - 1) + ": " + e.what());
      }
      have_eval = true;
      res.log += epochline(done, last_eval);
      if (last_eval.mean_cldice() > best) {
        best = last_eval.mean_cldice();
        best_epoch = done;
        if (!cfg.checkpoint.empty()) save_checkpoint(model, cfg.checkpoint);
      }
    }
    if (!resume_path.empty())
      write_resume(resume_path, model, st, stamp, done, best, best_epoch);
  }

  res.best_cldice = best;
  res.best_epoch = best_epoch;
  res.final_eval = have_eval ? last_eval : evaluate(model, val_set);
  return res;
}

}  // namespace vseg
