#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <string>

#include "utraj/model.hpp"
#include "utraj/parallel.hpp"

namespace utraj::model {

namespace {

struct Candidate {
  std::size_t scene = 0;
  std::size_t agent = 0;
  int step = 0;
};

/// Valid current steps of one track: full horizon ahead, at least one step behind.
std::pair<int, int> step_range(const AgentTrack& a, int horizon) {
  return {a.first_step() + 1, a.last_step() - horizon};
}

bool finite(const LossTerms& t) {
  return std::isfinite(t.loss) && std::isfinite(t.nll) && std::isfinite(t.sd) && std::isfinite(t.kl) &&
         std::isfinite(t.info);
}

void accumulate(LossTerms& acc, const LossTerms& t, double w) {
  acc.loss += w * t.loss;
  acc.nll += w * t.nll;
  acc.sd += w * t.sd;
  acc.kl += w * t.kl;
  acc.info += w * t.info;
}

LossTerms batched_loss(const Forecaster& model, const std::vector<Window>& windows, std::size_t batch_size) {
  LossTerms acc;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const std::size_t end = std::min(windows.size(), start + batch_size);
    std::vector<const Window*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&windows[i]);
    accumulate(acc, model.evaluate_loss(batch), static_cast<double>(batch.size()));
  }
  const double n = static_cast<double>(windows.size());
  acc.loss /= n;
  acc.nll /= n;
  acc.sd /= n;
  acc.kl /= n;
  acc.info /= n;
  return acc;
}

}  // namespace

TrainResult train(std::span<const Scene> train_scenes, std::span<const Scene> val_scenes,
                  const ModelConfig& model_config, const TrainConfig& train_config, const ProgressFn& progress) {
  model_config.validate();
  if (train_config.epochs < 1 || train_config.batch_size < 1 || train_config.windows_per_track < 1 ||
      train_config.val_stride < 1) {
    throw Error(ErrorCode::ConfigError, "training epochs, batch size, windows and stride must be >= 1");
  }

  std::vector<std::vector<Candidate>> tracks;
  for (std::size_t s = 0; s < train_scenes.size(); ++s) {
    for (std::size_t a = 0; a < train_scenes[s].agents.size(); ++a) {
      const AgentTrack& agent = train_scenes[s].agents[a];
      if (agent.type != model_config.agent_type) continue;
      const auto [lo, hi] = step_range(agent, model_config.horizon);
      if (lo > hi) continue;
      std::vector<Candidate> steps;
      for (int t = lo; t <= hi; ++t) steps.push_back({s, a, t});
      tracks.push_back(std::move(steps));
    }
  }
  if (tracks.empty()) throw Error(ErrorCode::InvalidArgument, "no training windows in the dataset");

  std::vector<Window> val_windows;
  for (const Scene& scene : val_scenes) {
    auto w = extract_windows(scene, model_config, train_config.val_stride);
    std::move(w.begin(), w.end(), std::back_inserter(val_windows));
  }

  TrainResult result{Forecaster(model_config, mix_seed(train_config.seed, 0x1417ull)), {}};
  Forecaster& model = result.model;
  ad::Adam optimizer(train_config.adam);
  const auto batch_size = static_cast<std::size_t>(train_config.batch_size);

  for (int epoch = 1; epoch <= train_config.epochs; ++epoch) {
    std::mt19937_64 rng(mix_seed(train_config.seed, static_cast<std::uint64_t>(epoch)));
    std::vector<Candidate> picks;
    for (const auto& steps : tracks) {
      std::uniform_int_distribution<std::size_t> pick(0, steps.size() - 1);
      for (int k = 0; k < train_config.windows_per_track; ++k) picks.push_back(steps[pick(rng)]);
    }
    std::shuffle(picks.begin(), picks.end(), rng);

    LossTerms epoch_terms;
    std::size_t seen = 0;
    std::size_t batch_id = 0;
    for (std::size_t start = 0; start < picks.size(); start += batch_size, ++batch_id) {
      const std::size_t end = std::min(picks.size(), start + batch_size);
      std::vector<Window> windows;
      windows.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        windows.push_back(make_window(train_scenes[picks[i].scene], picks[i].agent, picks[i].step, model_config));
      }
      std::vector<const Window*> batch;
      for (const Window& w : windows) batch.push_back(&w);

      ad::Tape tape;
      model.parameters().zero_grad();
      ForwardResult fr = model.forward(tape, batch, true, true);
      if (!finite(fr.terms)) {
        throw Error(ErrorCode::NonFiniteLoss,
                    "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_id) + " loss " +
                        std::to_string(fr.terms.loss));
      }
      tape.backward(fr.loss);
      const double norm = optimizer.step(model.parameters());
      if (!std::isfinite(norm)) {
        throw Error(ErrorCode::NonFiniteLoss,
                    "epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_id) + " gradient norm");
      }
      accumulate(epoch_terms, fr.terms, static_cast<double>(batch.size()));
      seen += batch.size();
    }
    const double inv = 1.0 / static_cast<double>(seen);
    epoch_terms.loss *= inv;
    epoch_terms.nll *= inv;
    epoch_terms.sd *= inv;
    epoch_terms.kl *= inv;
    epoch_terms.info *= inv;
    result.curves.push_back({epoch, "train", epoch_terms});
    if (progress) progress(result.curves.back());

    if (!val_windows.empty()) {
      const LossTerms v = batched_loss(model, val_windows, batch_size);
      if (!finite(v)) {
        throw Error(ErrorCode::NonFiniteLoss, "epoch " + std::to_string(epoch) + " validation loss");
      }
      result.curves.push_back({epoch, "val", v});
      if (progress) progress(result.curves.back());
    }
  }
  return result;
}

std::string curves_csv(std::span<const EpochStats> curves) {
  std::string out = "epoch,split,loss,nll_term,sd_term,kl_term,info_term\n";
  char buf[256];
  for (const auto& c : curves) {
    std::snprintf(buf, sizeof buf, "%d,%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", c.epoch, c.split.c_str(),
                  c.terms.loss, c.terms.nll, c.terms.sd, c.terms.kl, c.terms.info);
    out += buf;
  }
  return out;
}

}  // namespace utraj::model
