#include "proin/train.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace proin {

using ad::Matrix;
using json = nlohmann::json;

// ---- schedules ------------------------------------------------------------------

std::vector<StagePhase> toy_schedule() {
  return {{Stage::kWarmup, 8, 1e-3}, {Stage::kWarmup, 1, 1e-4}, {Stage::kAllocation, 12, 1e-3},
          {Stage::kAllocation, 3, 1e-4}};
}

std::vector<StagePhase> full_schedule() {
  return {{Stage::kWarmup, 32, 1e-3}, {Stage::kWarmup, 2, 1e-4}, {Stage::kAllocation, 46, 1e-3},
          {Stage::kAllocation, 10, 1e-4}};
}

std::vector<StagePhase> parse_schedule(std::string_view text) {
  if (text == "toy") return toy_schedule();
  if (text == "full") return full_schedule();
  std::vector<StagePhase> out;
  std::stringstream ss{std::string(text)};
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    const auto at = item.find('@');
    if (colon == std::string::npos || at == std::string::npos || at < colon)
      throw std::invalid_argument("bad schedule entry '" + item + "' (expected stage:epochs@lr)");
    StagePhase p;
    p.stage = stage_from_name(item.substr(0, colon));
    try {
      std::size_t used = 0;
      const std::string epochs = item.substr(colon + 1, at - colon - 1);
      p.epochs = std::stoi(epochs, &used);
      if (used != epochs.size() || p.epochs < 0) throw std::invalid_argument(epochs);
      const std::string lr = item.substr(at + 1);
      p.learning_rate = std::stod(lr, &used);
      if (used != lr.size()) throw std::invalid_argument(lr);
    } catch (const std::logic_error&) {
      throw std::invalid_argument("bad schedule entry '" + item + "' (expected stage:epochs@lr)");
    }
    out.push_back(p);
  }
  return out;
}

std::string format_schedule(const std::vector<StagePhase>& schedule) {
  std::ostringstream os;
  for (std::size_t i = 0; i < schedule.size(); ++i)
    os << (i ? "," : "") << stage_name(schedule[i].stage) << ':' << schedule[i].epochs << '@'
       << schedule[i].learning_rate;
  return os.str();
}

void TrainConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(flip_prob) || !prob(mask_prob) || !prob(mask_fraction))
    throw std::invalid_argument("TrainConfig: probabilities and mask_fraction must lie in [0, 1]");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  for (const auto& p : schedule) {
    if (p.epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
    if (!(p.learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  }
  if (!(clip_norm > 0)) throw std::invalid_argument("TrainConfig: clip_norm must be > 0");
  loss.validate();
}

// ---- augmentation ---------------------------------------------------------------

Scene flip_y(const Scene& scene) {
  RigidTransform mirror;
  mirror.rotation << 1.0, 0.0, 0.0, -1.0;
  return transform_scene(scene, mirror);
}

Scene mask_history(const Scene& scene, double fraction) {
  Scene out = scene;
  for (auto& a : out.agents) {
    // Row 0 is always the zero displacement, so masking starts at step 1.
    const int last = std::min(a.steps() - 1, static_cast<int>(std::floor(fraction * a.steps())));
    for (int t = 1; t <= last; ++t) {
      a.validity[t] = 0;
      a.displacements.row(t).setZero();
    }
  }
  return out;
}

Scene augment(const Scene& scene, std::mt19937_64& rng, const TrainConfig& config) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const bool flip = coin(rng) < config.flip_prob;
  const bool mask = coin(rng) < config.mask_prob;
  Scene out = flip ? flip_y(scene) : scene;
  return mask ? mask_history(out, config.mask_fraction) : out;
}

// ---- optimizer ------------------------------------------------------------------

void adam_step(ad::ParamStore& params, AdamState& state, double lr, const TrainConfig& c) {
  ++state.step;
  const double correct1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correct2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  params.for_each([&](const std::string& path, Matrix& value, Matrix& grad) {
    auto mit = state.m.try_emplace(path, Matrix::Zero(value.rows(), value.cols()));
    auto vit = state.v.try_emplace(path, Matrix::Zero(value.rows(), value.cols()));
    Matrix& m = mit.first->second;
    Matrix& v = vit.first->second;
    m = c.beta1 * m + (1.0 - c.beta1) * grad;
    v = c.beta2 * v + (1.0 - c.beta2) * grad.cwiseAbs2();
    value.array() -= lr * (m.array() / correct1) / ((v.array() / correct2).sqrt() + c.adam_epsilon);
  });
}

double clip_gradients(ad::ParamStore& params, double max_norm) {
  const double norm = params.grad_norm();
  if (std::isfinite(norm) && norm > max_norm) params.scale_grad(max_norm / norm);
  return norm;
}

// ---- config json ------------------------------------------------------------------

namespace {

json model_json(const ModelConfig& m) {
  return {{"d_agent", m.d_agent},
          {"d_map", m.d_map},
          {"modes", m.modes},
          {"history_steps", m.history_steps},
          {"future_steps", m.future_steps},
          {"delta", m.delta},
          {"lookahead_steps", m.lookahead_steps},
          {"a2a_radius", m.a2a_radius},
          {"pool_radius", m.pool_radius},
          {"mlp_hidden", m.mlp_hidden},
          {"topology", m.topology.flags()}};
}

void read_model(const json& j, ModelConfig& m) {
  m.d_agent = j.value("d_agent", m.d_agent);
  m.d_map = j.value("d_map", m.d_map);
  m.modes = j.value("modes", m.modes);
  m.history_steps = j.value("history_steps", m.history_steps);
  m.future_steps = j.value("future_steps", m.future_steps);
  m.delta = j.value("delta", m.delta);
  m.lookahead_steps = j.value("lookahead_steps", m.lookahead_steps);
  m.a2a_radius = j.value("a2a_radius", m.a2a_radius);
  m.pool_radius = j.value("pool_radius", m.pool_radius);
  m.mlp_hidden = j.value("mlp_hidden", m.mlp_hidden);
  if (j.contains("topology")) m.topology = Topology::parse(j.at("topology").get<std::string>());
}

json train_json(const TrainConfig& t) {
  json schedule = json::array();
  for (const auto& p : t.schedule)
    schedule.push_back({{"stage", stage_name(p.stage)}, {"epochs", p.epochs}, {"learning_rate", p.learning_rate}});
  return {{"schedule", schedule},
          {"batch_size", t.batch_size},
          {"seed", t.seed},
          {"flip_prob", t.flip_prob},
          {"mask_prob", t.mask_prob},
          {"mask_fraction", t.mask_fraction},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_epsilon", t.adam_epsilon},
          {"clip_norm", t.clip_norm},
          {"loss",
           {{"epsilon", t.loss.epsilon},
            {"eta", t.loss.eta},
            {"zeta", t.loss.zeta},
            {"varsigma", t.loss.varsigma},
            {"alpha", t.loss.alpha},
            {"beta", t.loss.beta}}}};
}

void read_train(const json& j, TrainConfig& t) {
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    if (s.is_string()) {
      t.schedule = parse_schedule(s.get<std::string>());
    } else {
      t.schedule.clear();
      for (const auto& p : s)
        t.schedule.push_back({stage_from_name(p.at("stage").get<std::string>()), p.at("epochs").get<int>(),
                              p.at("learning_rate").get<double>()});
    }
  }
  t.batch_size = j.value("batch_size", t.batch_size);
  t.seed = j.value("seed", t.seed);
  t.flip_prob = j.value("flip_prob", t.flip_prob);
  t.mask_prob = j.value("mask_prob", t.mask_prob);
  t.mask_fraction = j.value("mask_fraction", t.mask_fraction);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_epsilon = j.value("adam_epsilon", t.adam_epsilon);
  t.clip_norm = j.value("clip_norm", t.clip_norm);
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    t.loss.epsilon = l.value("epsilon", t.loss.epsilon);
    t.loss.eta = l.value("eta", t.loss.eta);
    t.loss.zeta = l.value("zeta", t.loss.zeta);
    t.loss.varsigma = l.value("varsigma", t.loss.varsigma);
    t.loss.alpha = l.value("alpha", t.loss.alpha);
    t.loss.beta = l.value("beta", t.loss.beta);
  }
}

}  // namespace

std::string config_to_json(const ModelConfig& model, const TrainConfig& train) {
  return json{{"model", model_json(model)}, {"train", train_json(train)}}.dump(2);
}

void config_from_json(const std::string& text, ModelConfig& model, TrainConfig& train) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  try {
    if (j.contains("model")) read_model(j.at("model"), model);
    if (j.contains("train")) read_train(j.at("train"), train);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  model.validate();
  train.validate();
}

void load_config_file(const std::filesystem::path& path, ModelConfig& model, TrainConfig& train) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    config_from_json(ss.str(), model, train);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
}

// ---- checkpoints ---------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'P', 'R', 'O', 'I', 'N', 'C', 'K', 'P'};

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_matrix(std::string& out, const Matrix& m) {
  out.append(reinterpret_cast<const char*>(m.data()), sizeof(double) * static_cast<std::size_t>(m.size()));
}

class Reader {
 public:
  Reader(const std::string& bytes, std::string where) : bytes_(bytes), where_(std::move(where)) {}

  void read(void* dst, std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size())
      throw std::runtime_error(where_ + ": truncated checkpoint while reading " + what);
    std::memcpy(dst, bytes_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T get(const char* what) {
    T v;
    read(&v, sizeof(T), what);
    return v;
  }
  Matrix matrix(Eigen::Index rows, Eigen::Index cols, const char* what) {
    Matrix m(rows, cols);
    read(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), what);
    return m;
  }
  bool done() const { return pos_ == bytes_.size(); }
  const std::string& where() const { return where_; }

 private:
  const std::string& bytes_;
  std::string where_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
  json params = json::array();
  c.params.for_each([&](const std::string& path, const Matrix& v, const Matrix&) {
    params.push_back({{"path", path}, {"rows", v.rows()}, {"cols", v.cols()}});
  });
  const bool moments = !c.adam.m.empty();
  const json header = {{"model", model_json(c.model)},
                       {"train", train_json(c.train)},
                       {"progress",
                        {{"phase", c.progress.phase},
                         {"phase_epoch", c.progress.phase_epoch},
                         {"epoch", c.progress.epoch}}},
                       {"rng_state", c.rng_state},
                       {"adam_step", c.adam.step},
                       {"adam_moments", moments},
                       {"params", params}};
  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, c.version);
  put<std::uint64_t>(out, text.size());
  out += text;
  c.params.for_each([&](const std::string&, const Matrix& v, const Matrix&) { put_matrix(out, v); });
  if (moments) {
    c.params.for_each([&](const std::string& path, const Matrix&, const Matrix&) { put_matrix(out, c.adam.m.at(path)); });
    c.params.for_each([&](const std::string& path, const Matrix&, const Matrix&) { put_matrix(out, c.adam.v.at(path)); });
  }
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& where) {
  Reader r(bytes, where);
  char magic[sizeof(kMagic)];
  r.read(magic, sizeof(magic), "magic");
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw std::runtime_error(where + ": not a checkpoint file");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion)
    throw std::runtime_error(where + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointVersion) + ")");
  const auto size = r.get<std::uint64_t>("header size");
  std::string text(size, '\0');
  r.read(text.data(), size, "header");
  Checkpoint c;
  c.version = version;
  std::vector<std::tuple<std::string, Eigen::Index, Eigen::Index>> shapes;
  bool moments = false;
  try {
    const json h = json::parse(text);
    read_model(h.at("model"), c.model);
    read_train(h.at("train"), c.train);
    c.progress.phase = h.at("progress").at("phase").get<int>();
    c.progress.phase_epoch = h.at("progress").at("phase_epoch").get<int>();
    c.progress.epoch = h.at("progress").at("epoch").get<int>();
    c.rng_state = h.at("rng_state").get<std::string>();
    c.adam.step = h.at("adam_step").get<std::int64_t>();
    moments = h.at("adam_moments").get<bool>();
    for (const auto& p : h.at("params"))
      shapes.emplace_back(p.at("path").get<std::string>(), p.at("rows").get<Eigen::Index>(),
                          p.at("cols").get<Eigen::Index>());
  } catch (const json::exception& e) {
    throw std::runtime_error(where + ": bad checkpoint header: " + e.what());
  }
  for (const auto& [path, rows, cols] : shapes) c.params.add(path, r.matrix(rows, cols, "parameters"));
  if (moments) {
    for (const auto& [path, rows, cols] : shapes) c.adam.m.emplace(path, r.matrix(rows, cols, "first moments"));
    for (const auto& [path, rows, cols] : shapes) c.adam.v.emplace(path, r.matrix(rows, cols, "second moments"));
  }
  if (!r.done()) throw std::runtime_error(where + ": trailing bytes after checkpoint payload");
  return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(c);
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

// ---- training ---------------------------------------------------------------------

Checkpoint initial_checkpoint(const ModelConfig& model, const TrainConfig& train) {
  model.validate();
  train.validate();
  Checkpoint c;
  c.model = model;
  c.train = train;
  c.params = init_params(model, train.seed);
  std::mt19937_64 rng(train.seed);
  std::ostringstream os;
  os << rng;
  c.rng_state = os.str();
  return c;
}

double scene_loss(const Scene& scene, const ad::ParamStore& params, const ModelConfig& model, const LossConfig& loss) {
  ad::Tape tape;
  const ForwardOutput out = forward(tape, scene, params, model);
  const Targets targets = make_targets(scene);
  return total_loss(out.trajectories, out.scores, out.modes, targets, loss).total.value()(0, 0);
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream os;
  os << "epoch,stage,mean_loss,lr\n";
  os.precision(10);
  for (const auto& e : log) os << e.epoch << ',' << stage_name(e.stage) << ',' << e.mean_loss << ',' << e.learning_rate << '\n';
  return os.str();
}

namespace {

bool trainable(const Scene& s) {
  if (!s.has_futures()) return false;
  return std::any_of(s.futures.begin(), s.futures.end(), [](const Future& f) { return f.endpoint_valid(); });
}

}  // namespace

TrainResult train(const std::vector<Scene>& dataset, Checkpoint state, const TrainOptions& options) {
  state.model.validate();
  state.train.validate();
  const TrainConfig& cfg = state.train;
  std::vector<Scene> scenes;
  for (const auto& s : dataset)
    if (trainable(s)) scenes.push_back(to_focal_frame(s).scene);
  if (scenes.empty()) throw std::invalid_argument("train: no scene with a valid future endpoint");

  std::mt19937_64 rng;
  {
    std::istringstream is(state.rng_state);
    is >> rng;
    if (!is) throw std::invalid_argument("train: unreadable RNG state in checkpoint");
  }
  if (!options.checkpoint_dir.empty()) std::filesystem::create_directories(options.checkpoint_dir);

  TrainResult result;
  auto snapshot = [&] {
    std::ostringstream os;
    os << rng;
    state.rng_state = os.str();
    result.checkpoint = state;
  };
  snapshot();

  std::vector<int> order(scenes.size());
  int epochs_run = 0;
  while (state.progress.phase < static_cast<int>(cfg.schedule.size())) {
    const StagePhase& phase = cfg.schedule[state.progress.phase];
    if (state.progress.phase_epoch >= phase.epochs) {
      ++state.progress.phase;
      state.progress.phase_epoch = 0;
      continue;
    }
    if (options.max_epochs >= 0 && epochs_run >= options.max_epochs) break;

    LossConfig loss = cfg.loss;
    loss.stage = phase.stage;
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    int loss_count = 0;
    bool diverged = false;
    for (std::size_t b = 0; b < order.size() && !diverged; b += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), b + cfg.batch_size);
      state.params.zero_grad();
      double batch_loss = 0;
      int used = 0;
      for (std::size_t j = b; j < end; ++j) {
        const Scene scene = augment(scenes[order[j]], rng, cfg);
        const Targets targets = make_targets(scene);
        if (targets.agents.empty()) continue;
        ad::Tape tape;
        const ForwardOutput out = forward(tape, scene, state.params, state.model);
        const LossTerms terms = total_loss(out.trajectories, out.scores, out.modes, targets, loss);
        const double value = terms.total.value()(0, 0);
        if (!std::isfinite(value)) {
          diverged = true;
          break;
        }
        tape.backward(terms.total);
        tape.accumulate_param_grads(state.params);
        batch_loss += value;
        ++used;
      }
      if (diverged || used == 0) continue;
      state.params.scale_grad(1.0 / used);
      if (!std::isfinite(clip_gradients(state.params, cfg.clip_norm))) {
        diverged = true;
        break;
      }
      adam_step(state.params, state.adam, phase.learning_rate, cfg);
      loss_sum += batch_loss;
      loss_count += used;
    }
    if (diverged) {
      result.diverged = true;
      result.message = "non-finite loss in epoch " + std::to_string(state.progress.epoch + 1) +
                       "; keeping the checkpoint of epoch " + std::to_string(result.checkpoint.progress.epoch);
      break;
    }

    ++state.progress.epoch;
    ++epochs_run;
    if (++state.progress.phase_epoch >= phase.epochs) {
      ++state.progress.phase;
      state.progress.phase_epoch = 0;
    }
    const EpochLog entry{state.progress.epoch, phase.stage, loss_count ? loss_sum / loss_count : 0.0,
                         phase.learning_rate};
    result.log.push_back(entry);
    if (options.verbose)
      std::cerr << "epoch " << entry.epoch << " " << stage_name(entry.stage) << " loss " << entry.mean_loss << " lr "
                << entry.learning_rate << '\n';
    snapshot();
    if (!options.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof(name), "epoch-%03d.ckpt", state.progress.epoch);
      save_checkpoint(result.checkpoint, options.checkpoint_dir / name);
    }
    if (!options.log_path.empty()) {
      std::ofstream log(options.log_path, std::ios::binary);
      log << training_log_csv(result.log);
    }
    if (options.on_epoch) options.on_epoch(entry);
  }
  return result;
}

TrainResult train(const std::vector<Scene>& dataset, const ModelConfig& model, const TrainConfig& config,
                  const TrainOptions& options) {
  return train(dataset, initial_checkpoint(model, config), options);
}

}  // namespace proin
