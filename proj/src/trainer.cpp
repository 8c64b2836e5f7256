#include "modest/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "modest/rng.hpp"

namespace modest {

std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::ccl: return "ccl";
    case LossMode::infonce: return "infonce";
    case LossMode::kl_only: return "kl_only";
    case LossMode::rp_only: return "rp_only";
  }
  fail(Errc::invalid_argument, "unknown loss mode");
}

LossMode loss_mode_from_string(std::string_view s) {
  if (s == "ccl") return LossMode::ccl;
  if (s == "infonce") return LossMode::infonce;
  if (s == "kl_only") return LossMode::kl_only;
  if (s == "rp_only") return LossMode::rp_only;
  fail(Errc::invalid_argument, "unknown loss mode '" + std::string(s) + "'");
}

namespace {

nlohmann::json adapter_to_json(const AdapterConfig& a) {
  return {{"in_dim", a.in_dim},
          {"depth", a.depth},
          {"expansion", a.expansion},
          {"out_dim", a.out_dim},
          {"init_seed", a.init_seed}};
}

AdapterConfig adapter_from_json(const nlohmann::json& j) {
  AdapterConfig a;
  a.in_dim = j.value("in_dim", std::int64_t(0));
  a.depth = j.value("depth", std::int64_t(4));
  a.expansion = j.value("expansion", std::int64_t(4));
  a.out_dim = j.value("out_dim", std::int64_t(512));
  a.init_seed = j.value("init_seed", std::uint64_t(0));
  return a;
}

}  // namespace

std::string run_config_to_json(const RunConfig& c) {
  nlohmann::json j;  // nlohmann::json keeps keys sorted, so dump() is canonical
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["tau"] = c.tau;
  j["sigma"] = c.sigma;
  j["alpha"] = c.alpha;
  j["lambda"] = c.lambda;
  j["alpha_schedule"] = {
      {"kind", c.alpha_schedule.kind == AlphaScheduleKind::fixed ? "fixed" : "dynamic"},
      {"alpha_start", c.alpha_schedule.alpha_start},
      {"alpha_end", c.alpha_schedule.alpha_end}};
  j["use_fusemix"] = c.use_fusemix;
  j["beta_param"] = c.beta_param;
  j["symmetric_loss"] = c.symmetric_loss;
  j["loss_mode"] = to_string(c.loss_mode);
  j["similarity"] = c.similarity == Similarity::cosine ? "cosine" : "dot";
  j["rp_position"] = c.rp_position == RpPosition::pre_adapter ? "pre_adapter" : "post_adapter";
  j["adapter_x"] = adapter_to_json(c.adapter_x);
  j["adapter_y"] = adapter_to_json(c.adapter_y);
  j["schedule"] = {{"lr_start", c.schedule.lr_start},
                   {"lr_peak", c.schedule.lr_peak},
                   {"warmup_steps", c.schedule.warmup_steps},
                   {"total_steps", c.schedule.total_steps}};
  j["master_seed"] = c.master_seed;
  return j.dump(2) + "\n";
}

RunConfig run_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::invalid_argument, std::string("bad run config JSON: ") + e.what());
  }
  RunConfig c;
  try {
    c.batch_size = j.value("batch_size", std::int64_t(c.batch_size));
    c.epochs = j.value("epochs", std::int64_t(c.epochs));
    c.tau = j.value("tau", c.tau);
    c.sigma = j.value("sigma", c.sigma);
    c.alpha = j.value("alpha", c.alpha);
    c.lambda = j.value("lambda", c.lambda);
    if (j.contains("alpha_schedule")) {
      const auto& a = j["alpha_schedule"];
      const std::string kind = a.value("kind", "fixed");
      if (kind != "fixed" && kind != "dynamic")
        fail(Errc::invalid_argument, "alpha_schedule.kind must be fixed|dynamic");
      c.alpha_schedule.kind =
          kind == "fixed" ? AlphaScheduleKind::fixed : AlphaScheduleKind::dynamic;
      c.alpha_schedule.alpha_start = a.value("alpha_start", c.alpha_schedule.alpha_start);
      c.alpha_schedule.alpha_end = a.value("alpha_end", c.alpha_schedule.alpha_end);
    }
    c.use_fusemix = j.value("use_fusemix", c.use_fusemix);
    c.beta_param = j.value("beta_param", c.beta_param);
    c.symmetric_loss = j.value("symmetric_loss", c.symmetric_loss);
    if (j.contains("loss_mode")) c.loss_mode = loss_mode_from_string(j["loss_mode"].get<std::string>());
    if (j.contains("similarity")) {
      const std::string s = j["similarity"].get<std::string>();
      if (s != "cosine" && s != "dot") fail(Errc::invalid_argument, "similarity must be cosine|dot");
      c.similarity = s == "cosine" ? Similarity::cosine : Similarity::dot;
    }
    if (j.contains("rp_position")) {
      const std::string s = j["rp_position"].get<std::string>();
      if (s != "pre_adapter" && s != "post_adapter")
        fail(Errc::invalid_argument, "rp_position must be pre_adapter|post_adapter");
      c.rp_position = s == "pre_adapter" ? RpPosition::pre_adapter : RpPosition::post_adapter;
    }
    if (j.contains("adapter_x")) c.adapter_x = adapter_from_json(j["adapter_x"]);
    if (j.contains("adapter_y")) c.adapter_y = adapter_from_json(j["adapter_y"]);
    if (j.contains("schedule")) {
      const auto& s = j["schedule"];
      c.schedule.lr_start = s.value("lr_start", c.schedule.lr_start);
      c.schedule.lr_peak = s.value("lr_peak", c.schedule.lr_peak);
      c.schedule.warmup_steps = s.value("warmup_steps", std::int64_t(0));
      c.schedule.total_steps = s.value("total_steps", std::int64_t(0));
    }
    c.master_seed = j.value("master_seed", c.master_seed);
  } catch (const Error&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::invalid_argument, std::string("bad run config field: ") + e.what());
  }
  return c;
}

std::uint64_t run_config_hash(const RunConfig& c) { return fnv1a64(run_config_to_json(c)); }

std::string run_log_to_jsonl(const RunLog& log) {
  std::ostringstream out;
  for (const auto& e : log.epochs) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["mean_loss"] = e.mean_loss;
    j["mean_entropy"] = e.mean_entropy;
    j["mean_grad_l1"] = e.mean_grad_l1;
    j["alpha"] = e.alpha;
    j["lr"] = e.lr;
    out << j.dump() << '\n';
  }
  return out.str();
}

std::string run_timing_to_jsonl(const RunLog& log) {
  std::ostringstream out;
  for (const auto& e : log.epochs) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["wall_seconds"] = e.wall_seconds;
    out << j.dump() << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic "MACK", version, config hash, then
// length-prefixed named sections of tensor dumps.

namespace {

constexpr char kCkptMagic[4] = {'M', 'A', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(char((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& src) : buf_(buf), src_(src) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(buf_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void raw(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  bool eof() const { return pos_ == buf_.size(); }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size())
      fail(Errc::truncated_file, src_ + ": truncated at byte " + std::to_string(pos_));
  }
  const std::string& buf_;
  std::string src_;
  std::size_t pos_ = 0;
};

void dump_tensor_dims(std::string& buf, Index rows, Index cols) {
  put_u64(buf, std::uint64_t(rows));
  put_u64(buf, std::uint64_t(cols));
}

template <typename Tensor>
void dump_tensor(std::string& buf, const Tensor& t) {
  dump_tensor_dims(buf, t.rows(), t.cols());
  buf.append(reinterpret_cast<const char*>(t.data()), std::size_t(t.size()) * sizeof(float));
}

template <typename Tensor>
void read_tensor(Reader& r, Tensor& t) {
  const Index rows = Index(r.u64());
  const Index cols = Index(r.u64());
  t.resize(rows, cols);
  r.raw(t.data(), std::size_t(t.size()) * sizeof(float));
}

std::string dump_adapter(const AdapterNetwork<float>& net) {
  std::string buf;
  put_u64(buf, std::uint64_t(net.config.in_dim));
  put_u64(buf, std::uint64_t(net.config.depth));
  put_u64(buf, std::uint64_t(net.config.expansion));
  put_u64(buf, std::uint64_t(net.config.out_dim));
  put_u64(buf, net.config.init_seed);
  for_each_tensor(net, [&buf](const auto& t) { dump_tensor(buf, t); });
  return buf;
}

AdapterNetwork<float> read_adapter(Reader& r) {
  AdapterConfig c;
  c.in_dim = Index(r.u64());
  c.depth = Index(r.u64());
  c.expansion = Index(r.u64());
  c.out_dim = Index(r.u64());
  c.init_seed = r.u64();
  AdapterNetwork<float> net = init_adapter<float>(c);
  for_each_tensor(net, [&r](auto& t) { read_tensor(r, t); });
  return net;
}

std::string dump_optimizer(const OptimizerState<float>& s) {
  std::string buf;
  put_u64(buf, std::uint64_t(s.step));
  std::uint64_t bits;
  auto put_f64 = [&buf, &bits](double v) {
    std::memcpy(&bits, &v, 8);
    put_u64(buf, bits);
  };
  put_f64(s.config.beta1);
  put_f64(s.config.beta2);
  put_f64(s.config.epsilon);
  put_f64(s.config.weight_decay);
  dump_tensor(buf, s.first_moment);
  dump_tensor(buf, s.second_moment);
  return buf;
}

OptimizerState<float> read_optimizer(Reader& r) {
  OptimizerState<float> s;
  s.step = std::int64_t(r.u64());
  auto get_f64 = [&r]() {
    std::uint64_t bits = r.u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  };
  s.config.beta1 = get_f64();
  s.config.beta2 = get_f64();
  s.config.epsilon = get_f64();
  s.config.weight_decay = get_f64();
  read_tensor(r, s.first_moment);
  read_tensor(r, s.second_moment);
  return s;
}

void append_section(std::string& buf, std::string_view name, const std::string& payload) {
  put_u32(buf, std::uint32_t(name.size()));
  buf.append(name);
  put_u64(buf, payload.size());
  buf.append(payload);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::string buf;
  buf.append(kCkptMagic, 4);
  put_u32(buf, kCkptVersion);
  put_u64(buf, ckpt.config_hash);

  std::string meta;
  put_u64(meta, std::uint64_t(ckpt.epoch));
  put_u64(meta, std::uint64_t(ckpt.global_step));
  put_u64(meta, ckpt.master_seed);
  append_section(buf, "meta", meta);
  append_section(buf, "adapter_x", dump_adapter(ckpt.adapter_x));
  append_section(buf, "adapter_y", dump_adapter(ckpt.adapter_y));
  append_section(buf, "opt_x", dump_optimizer(ckpt.opt_x));
  append_section(buf, "opt_y", dump_optimizer(ckpt.opt_y));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::io_failure, "cannot open " + path.string() + " for writing");
  out.write(buf.data(), std::streamsize(buf.size()));
  out.flush();
  if (!out) fail(Errc::io_failure, "write error on " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::io_failure, "cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(buf, path.string());

  const std::string magic = r.bytes(4);
  if (std::memcmp(magic.data(), kCkptMagic, 4) != 0)
    fail(Errc::bad_magic, path.string() + ": bad checkpoint magic at byte offset 0");
  const std::uint32_t version = r.u32();
  if (version != kCkptVersion)
    fail(Errc::version_unsupported, path.string() + ": checkpoint version " + std::to_string(version));

  Checkpoint ckpt;
  ckpt.config_hash = r.u64();
  bool saw_meta = false, saw_ax = false, saw_ay = false, saw_ox = false, saw_oy = false;
  while (!r.eof()) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint64_t payload_len = r.u64();
    const std::string payload = r.bytes(payload_len);
    Reader pr(payload, path.string() + ":" + name);
    if (name == "meta") {
      ckpt.epoch = Index(pr.u64());
      ckpt.global_step = std::int64_t(pr.u64());
      ckpt.master_seed = pr.u64();
      saw_meta = true;
    } else if (name == "adapter_x") {
      ckpt.adapter_x = read_adapter(pr);
      saw_ax = true;
    } else if (name == "adapter_y") {
      ckpt.adapter_y = read_adapter(pr);
      saw_ay = true;
    } else if (name == "opt_x") {
      ckpt.opt_x = read_optimizer(pr);
      saw_ox = true;
    } else if (name == "opt_y") {
      ckpt.opt_y = read_optimizer(pr);
      saw_oy = true;
    }
    // Unknown sections are skipped for forward compatibility.
  }
  if (!(saw_meta && saw_ax && saw_ay && saw_ox && saw_oy))
    fail(Errc::truncated_file, path.string() + ": missing checkpoint sections");
  return ckpt;
}

// ---------------------------------------------------------------------------

std::vector<std::vector<Index>> make_epoch_batches(Index count, Index n,
                                                   std::uint64_t epoch_seed) {
  if (n < 1) fail(Errc::invalid_argument, "batch size must be >= 1");
  if (count < n)
    fail(Errc::dataset_smaller_than_batch, "dataset of " + std::to_string(count) +
                                               " rows cannot fill a batch of " +
                                               std::to_string(n));
  std::vector<Index> order(static_cast<std::size_t>(count));
  for (Index i = 0; i < count; ++i) order[std::size_t(i)] = i;
  std::mt19937_64 rng(epoch_seed);
  std::shuffle(order.begin(), order.end(), rng);

  const Index full = count / n;
  std::vector<std::vector<Index>> batches(static_cast<std::size_t>(full));
  for (Index b = 0; b < full; ++b)
    batches[std::size_t(b)].assign(order.begin() + b * n, order.begin() + (b + 1) * n);
  return batches;
}

RunConfig resolve_config(RunConfig c, const PairedDataset& ds) {
  validate_pairing(ds);
  if (c.batch_size < 2) fail(Errc::invalid_argument, "batch_size must be >= 2");
  if (c.epochs < 1) fail(Errc::invalid_argument, "epochs must be >= 1");
  if (c.adapter_x.in_dim == 0) c.adapter_x.in_dim = ds.x.dim;
  if (c.adapter_y.in_dim == 0) c.adapter_y.in_dim = ds.y.dim;
  if (c.adapter_x.in_dim != ds.x.dim || c.adapter_y.in_dim != ds.y.dim)
    fail(Errc::dim_mismatch, "adapter in_dims do not match dataset dims");
  if (c.adapter_x.out_dim != c.adapter_y.out_dim)
    fail(Errc::dim_mismatch, "adapters must share out_dim");
  if (ds.x.count < c.batch_size)
    fail(Errc::dataset_smaller_than_batch, "dataset smaller than one batch");

  const Index batches_per_epoch = ds.x.count / c.batch_size;
  if (c.schedule.total_steps == 0)
    c.schedule.total_steps = std::int64_t(c.epochs) * std::int64_t(batches_per_epoch);
  if (c.schedule.warmup_steps == 0)
    c.schedule.warmup_steps =
        std::max<std::int64_t>(1, std::int64_t(0.05 * double(c.schedule.total_steps)));
  validate(c.schedule);
  validate(c.adapter_x);
  validate(c.adapter_y);
  return c;
}

namespace {

// Ablation axes resolve to an effective (sigma, alpha) pair; every mode then
// runs the same code path.
std::pair<double, double> effective_sigma_alpha(const RunConfig& c, double epoch_alpha) {
  switch (c.loss_mode) {
    case LossMode::ccl: return {c.sigma, epoch_alpha};
    case LossMode::infonce: return {0.0, 0.0};
    case LossMode::rp_only: return {c.sigma, 0.0};
    case LossMode::kl_only: return {0.0, epoch_alpha};
  }
  fail(Errc::invalid_argument, "unknown loss mode");
}

}  // namespace

Trainer::Trainer(RunConfig config, const PairedDataset& ds)
    : config_(resolve_config(std::move(config), ds)),
      ds_(ds),
      adapter_x_(init_adapter<float>(config_.adapter_x)),
      adapter_y_(init_adapter<float>(config_.adapter_y)),
      opt_x_(init_optimizer<float>(config_.adapter_x)),
      opt_y_(init_optimizer<float>(config_.adapter_y)) {}

Trainer::Trainer(RunConfig config, const PairedDataset& ds, const Checkpoint& ckpt)
    : config_(resolve_config(std::move(config), ds)),
      ds_(ds),
      adapter_x_(ckpt.adapter_x),
      adapter_y_(ckpt.adapter_y),
      opt_x_(ckpt.opt_x),
      opt_y_(ckpt.opt_y),
      next_epoch_(ckpt.epoch),
      global_step_(ckpt.global_step) {
  if (run_config_hash(config_) != ckpt.config_hash)
    fail(Errc::config_hash_mismatch, "checkpoint was produced by a different config");
}

void Trainer::run_epoch() {
  if (done()) fail(Errc::epoch_out_of_range, "training already finished");
  const auto start = std::chrono::steady_clock::now();
  const Index e = next_epoch_;

  double epoch_alpha = config_.alpha;
  if (config_.alpha_schedule.kind == AlphaScheduleKind::dynamic)
    epoch_alpha = dynamic_alpha(e, config_.epochs, config_.alpha_schedule.alpha_start,
                                config_.alpha_schedule.alpha_end);
  const auto [sigma_eff, alpha_eff] = effective_sigma_alpha(config_, epoch_alpha);

  const auto batches = make_epoch_batches(
      ds_.x.count, config_.batch_size, derive_seed(config_.master_seed, "batches", std::uint64_t(e)));

  double sum_loss = 0.0, sum_entropy = 0.0, sum_gradl1 = 0.0;
  double last_lr = 0.0;

  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const auto& batch = batches[bi];
    const Index n = Index(batch.size());
    RowMatrixXf bx(n, ds_.x.dim), by(n, ds_.y.dim);
    for (Index i = 0; i < n; ++i) {
      bx.row(i) = ds_.x.data.row(batch[std::size_t(i)]);
      by.row(i) = ds_.y.data.row(batch[std::size_t(i)]);
    }

    if (config_.use_fusemix) {
      auto mixed = fusemix_mix(bx, by, config_.beta_param,
                               derive_seed(config_.master_seed, "fusemix", std::uint64_t(e), bi));
      bx = std::move(mixed.first);
      by = std::move(mixed.second);
    }

    const std::uint64_t seed_x = derive_seed(config_.master_seed, "noise_x", std::uint64_t(e), bi);
    const std::uint64_t seed_y = derive_seed(config_.master_seed, "noise_y", std::uint64_t(e), bi);
    if (config_.rp_position == RpPosition::pre_adapter) {
      bx = perturb(bx, {sigma_eff, seed_x});
      by = perturb(by, {sigma_eff, seed_y});
    }

    auto [ax, cache_x] = forward(adapter_x_, bx);
    auto [ay, cache_y] = forward(adapter_y_, by);

    CclOptions opt;
    opt.alpha = alpha_eff;
    opt.sigma = sigma_eff;
    opt.lambda = config_.lambda;
    opt.tau = config_.tau;
    opt.seed_x = seed_x;
    opt.seed_y = seed_y;
    opt.symmetric = config_.symmetric_loss;
    opt.similarity = config_.similarity;
    opt.perturb_inputs = config_.rp_position == RpPosition::post_adapter;
    const LossBundle<float> bundle = ccl_loss(ax, ay, opt);

    if (!std::isfinite(bundle.loss))
      fail(Errc::non_finite_loss, "non-finite loss at epoch " + std::to_string(e) + ", batch " +
                                      std::to_string(bi));

    const AdapterGradients<float> gx = backward(adapter_x_, cache_x, bundle.grad_zx);
    const AdapterGradients<float> gy = backward(adapter_y_, cache_y, bundle.grad_zy);

    last_lr = lr_at(global_step_, config_.schedule);
    adamw_step(opt_x_, adapter_x_, gx, last_lr);
    adamw_step(opt_y_, adapter_y_, gy, last_lr);
    ++global_step_;

    sum_loss += bundle.loss;
    sum_entropy += bundle.mean_entropy;
    sum_gradl1 += bundle.mean_grad_l1;
  }

  const double nb = double(batches.size());
  EpochRecord rec;
  rec.epoch = e;
  rec.mean_loss = sum_loss / nb;
  rec.mean_entropy = sum_entropy / nb;
  rec.mean_grad_l1 = sum_gradl1 / nb;
  rec.alpha = alpha_eff;
  rec.lr = last_lr;
  rec.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  log_.epochs.push_back(rec);
  ++next_epoch_;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.adapter_x = adapter_x_;
  c.adapter_y = adapter_y_;
  c.opt_x = opt_x_;
  c.opt_y = opt_y_;
  c.epoch = next_epoch_;
  c.global_step = global_step_;
  c.config_hash = run_config_hash(config_);
  c.master_seed = config_.master_seed;
  return c;
}

std::pair<TrainedAdapters, RunLog> train(const RunConfig& config, const PairedDataset& ds) {
  Trainer t(config, ds);
  while (!t.done()) t.run_epoch();
  return {{t.adapter_x(), t.adapter_y()}, t.log()};
}

// ---------------------------------------------------------------------------

int thread_cap() {
  if (const char* env = std::getenv("MODEST_ALIGN_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return int(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? int(hw) : 1;
}

std::vector<GridCell> grid_search(const RunConfig& base, std::span<const double> sigmas,
                                  std::span<const double> alphas, const PairedDataset& train_ds,
                                  const PairedDataset& eval_ds) {
  if (sigmas.empty() || alphas.empty())
    fail(Errc::invalid_argument, "grid value lists must be non-empty");

  struct Cell {
    double sigma, alpha;
  };
  std::vector<Cell> todo;
  for (double s : sigmas)
    for (double a : alphas) todo.push_back({s, a});

  std::vector<GridCell> cells(todo.size());
  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = cursor.fetch_add(1);
      if (i >= todo.size()) return;
      RunConfig c = base;  // seeds identical across cells
      c.sigma = todo[i].sigma;
      c.alpha = todo[i].alpha;
      auto [adapters, log] = train(c, train_ds);
      auto [t2i, i2t] = retrieval_report(eval_ds, adapters.x, adapters.y);
      GridCell& out = cells[i];
      out.sigma = todo[i].sigma;
      out.alpha = todo[i].alpha;
      out.t2i = t2i;
      out.i2t = i2t;
      out.mean_r1 = 0.5 * (t2i.r_at.at(1) + i2t.r_at.at(1));
    }
  };

  const int workers = std::min<int>(thread_cap(), int(todo.size()));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(std::size_t(workers));
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  std::stable_sort(cells.begin(), cells.end(),
                   [](const GridCell& a, const GridCell& b) { return a.mean_r1 > b.mean_r1; });
  return cells;
}

std::string grid_to_csv(std::span<const GridCell> cells) {
  std::ostringstream out;
  out << "sigma,alpha,r1_text_to_image,r1_image_to_text,mean_r1\n";
  for (const auto& c : cells)
    out << c.sigma << ',' << c.alpha << ',' << c.t2i.r_at.at(1) << ',' << c.i2t.r_at.at(1) << ','
        << c.mean_r1 << '\n';
  return out.str();
}

}  // namespace modest
