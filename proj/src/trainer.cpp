// Copyright 2026 The rcil Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "rcil/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "rcil/distill.hpp"
#include "rcil/ops.hpp"

namespace rcil {

// ---------------------------------------------------------------------------
// Loss assembly.

BatchLoss compute_batch_loss(StepModel& model, const Tensor& images, const LabelMap& labels,
                             const ClassPartition& part, bool first_step,
                             const ExperimentConfig& cfg, Rng& rng) {
  BatchLoss out;
  const MethodSpec& m = cfg.method;
  const bool domain = cfg.mode == "domain";
  ForwardResult fs = model.student.forward_train(images, rng, cfg.drop_path);

  if (first_step || domain || !m.unbiased) {
    out.terms.ce = ce_loss(fs.logits, labels);
    out.executed.insert("ce");
  } else {
    out.terms.ce = unce_loss(fs.logits, labels, part);
    out.executed.insert("unce");
  }

  Real kd_factor = 1.0;
  if (!first_step && (m.logit_kd || m.pcd)) {
    ForwardResult ft;
    {
      NoGradGuard guard;
      ft = model.teacher.forward_eval(images);
    }
    if (m.logit_kd) {
      if (m.unbiased && !domain) {
        out.terms.kd = unkd_loss(fs.logits, ft.logits, part, &labels);
        out.executed.insert("unkd");
        kd_factor = adaptive_factor(part, cfg.loss);
      } else {
        out.terms.kd = kd_loss(fs.logits, ft.logits, part, &labels);
        out.executed.insert("kd");
      }
    }
    if (m.pcd) {
      switch (cfg.distill.variant) {
        case DistillVariant::kAvgCube:
          out.terms.skd = skd_loss(ft.taps, fs.taps, cfg.distill);
          out.terms.ckd = ckd_loss(ft.taps, fs.taps, cfg.distill);
          out.executed.insert("skd");
          out.executed.insert("ckd");
          break;
        case DistillVariant::kStrip:
          out.terms.skd = strip_pool_loss(ft.taps, fs.taps, cfg.distill);
          out.executed.insert("strip");
          break;
        case DistillVariant::kMax:
          out.terms.skd = max_pool_loss(ft.taps, fs.taps, cfg.distill);
          out.executed.insert("max");
          break;
        case DistillVariant::kGap:
          out.terms.skd = gap_loss(ft.taps, fs.taps, cfg.distill);
          out.executed.insert("gap");
          break;
        case DistillVariant::kNone:
          out.terms.skd = unpooled_loss(ft.taps, fs.taps, cfg.distill);
          out.executed.insert("unpooled");
          break;
      }
    }
  }
  out.total = total_loss(out.terms, kd_factor, cfg.loss);
  return out;
}

namespace {

Real value_or_zero(const Tensor& t) { return t.defined() ? t.item() : 0.0; }

void write_nan_dump(const std::filesystem::path& dir, const IterationRecord& rec,
                    const SegNetwork& student) {
  if (dir.empty()) return;
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "nan_dump.txt");
  out << "step " << rec.step << "\nepoch " << rec.epoch << "\niteration " << rec.iteration
      << "\nlr " << rec.lr << "\ntotal " << rec.total << "\nce " << rec.ce << "\nkd " << rec.kd
      << "\nskd " << rec.skd << "\nckd " << rec.ckd << "\n";
  int idx = 0;
  for (const Tensor& p : student.parameters()) {
    Real sq = 0.0;
    bool finite = true;
    for (Real v : p.data()) {
      sq += v * v;
      finite = finite && std::isfinite(v);
    }
    out << "param " << idx++ << " " << p.shape().str() << " norm " << std::sqrt(sq)
        << (finite ? "" : " NONFINITE") << "\n";
  }
}

}  // namespace

TrainHistory train_step(StepModel& model, const StepDataset& data, const ExperimentConfig& cfg,
                        Rng& rng, const StepContext& ctx) {
  if (!ctx.schedule) throw Error("train_step: no schedule");
  const TaskSchedule& sched = *ctx.schedule;
  const int t = ctx.step;
  if (data.scenes.empty())
    throw Error("train_step: step " + std::to_string(t) + " has no training images");

  const bool first_step = t == 0;
  const ClassPartition part = sched.partition(t);
  const std::vector<int> channel_map = sched.channel_of_class(t);
  const std::size_t n = data.scenes.size();
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::int64_t iters_per_epoch = static_cast<std::int64_t>((n + bs - 1) / bs);

  OptimizerState os;
  os.base_lr = first_step ? cfg.lr_first : cfg.lr_next;
  os.momentum = cfg.momentum;
  os.poly_power = cfg.poly_power;
  os.total_iterations = iters_per_epoch * cfg.epochs;
  Sgd sgd(os);
  int start_epoch = 0;
  if (ctx.resume) {
    sgd.state() = ctx.resume->optimizer;
    sgd.velocity() = ctx.resume->velocity;
    start_epoch = ctx.resume->epoch;
  }

  std::vector<Tensor> params = model.student.trainable_parameters();
  TrainHistory hist;
  std::vector<std::size_t> order(n);
  for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order.begin(), order.end());
    Real epoch_loss = 0.0;
    int epoch_iters = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs) {
      const std::size_t b1 = std::min(n, b0 + bs);
      std::vector<const Scene*> batch;
      std::vector<bool> flips;
      for (std::size_t i = b0; i < b1; ++i) {
        batch.push_back(&data.scenes[order[i]]);
        flips.push_back(cfg.hflip && rng.uniform() < 0.5);
      }
      const Tensor images = scenes_to_tensor(batch, flips);
      const LabelMap labels = scenes_to_labels(batch, channel_map, flips);

      zero_grad(params);
      BatchLoss bl = compute_batch_loss(model, images, labels, part, first_step, cfg, rng);
      IterationRecord rec;
      rec.step = t;
      rec.epoch = epoch;
      rec.iteration = static_cast<int>(sgd.state().iteration);
      rec.lr = sgd.state().effective_lr();
      rec.total = bl.total.item();
      rec.ce = value_or_zero(bl.terms.ce);
      rec.kd = value_or_zero(bl.terms.kd);
      rec.skd = value_or_zero(bl.terms.skd);
      rec.ckd = value_or_zero(bl.terms.ckd);
      if (!std::isfinite(rec.total)) {
        write_nan_dump(ctx.dump_dir, rec, model.student);
        throw NonFiniteLossError("non-finite loss at step " + std::to_string(t) + ", epoch " +
                                 std::to_string(epoch) + ", iteration " +
                                 std::to_string(rec.iteration) + " (ce " +
                                 std::to_string(rec.ce) + ", kd " + std::to_string(rec.kd) +
                                 ", skd " + std::to_string(rec.skd) + ", ckd " +
                                 std::to_string(rec.ckd) + ")");
      }
      backward(bl.total);
      sgd.step(params);
      hist.iterations.push_back(rec);
      hist.executed_terms.insert(bl.executed.begin(), bl.executed.end());
      epoch_loss += rec.total;
      ++epoch_iters;
    }

    EpochRecord er;
    er.step = t;
    er.epoch = epoch;
    er.mean_loss = epoch_loss / std::max(1, epoch_iters);
    er.holdout_miou = std::nan("");
    const bool last = epoch + 1 == cfg.epochs;
    const bool due = cfg.holdout_every > 0 && (epoch + 1) % cfg.holdout_every == 0;
    if (ctx.holdout && !ctx.holdout->empty() && (last || due))
      er.holdout_miou = evaluate(model.student, *ctx.holdout, sched, t).miou_all;
    hist.epochs.push_back(er);

    if (ctx.on_epoch) {
      TrainState st;
      st.step_index = t;
      st.epoch = epoch + 1;
      st.optimizer = sgd.state();
      st.velocity = sgd.velocity();
      st.rng_state = rng.serialize();
      st.rng_seed = cfg.seed;
      ctx.on_epoch(st, model, hist);
    }
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Checkpoints.

namespace {

constexpr char kMagic[8] = {'R', 'C', 'I', 'L', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u32(std::uint32_t v) { raw(&v, sizeof v); }
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void i64(std::int64_t v) { raw(&v, sizeof v); }
  void real(Real v) { raw(&v, sizeof v); }
  void str(const std::string& s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void reals(const std::vector<Real>& v) {
    u64(v.size());
    raw(v.data(), v.size() * sizeof(Real));
  }
  void raw(const void* p, std::size_t n) {
    const auto* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  const std::string& buffer() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : buf_(std::move(data)) {}
  std::uint32_t u32() { return pod<std::uint32_t>(); }
  std::uint64_t u64() { return pod<std::uint64_t>(); }
  std::int64_t i64() { return pod<std::int64_t>(); }
  Real real() { return pod<Real>(); }
  std::string str() {
    const std::uint64_t n = u64();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<Real> reals() {
    const std::uint64_t n = u64();
    need(n * sizeof(Real));
    std::vector<Real> v(n);
    std::copy_n(buf_.data() + pos_, n * sizeof(Real), reinterpret_cast<char*>(v.data()));
    pos_ += n * sizeof(Real);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::copy_n(buf_.data() + pos_, n, static_cast<char*>(dst));
    pos_ += n;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  template <typename T>
  T pod() {
    T v{};
    bytes(&v, sizeof v);
    return v;
  }
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw Error("checkpoint truncated");
  }
  std::string buf_;
  std::size_t pos_ = 0;
};

void write_tensor(Writer& w, const std::string& name, const Tensor& t) {
  w.str(name);
  if (!t.defined()) {
    w.u32(0);
    return;
  }
  w.u32(1);
  const Shape4 s = t.shape();
  w.i64(s.n);
  w.i64(s.c);
  w.i64(s.h);
  w.i64(s.w);
  w.u32(t.requires_grad() ? 1 : 0);
  w.reals(std::vector<Real>(t.data().begin(), t.data().end()));
}

Tensor read_tensor(Reader& r, const std::string& expected) {
  const std::string name = r.str();
  if (name != expected)
    throw Error("checkpoint: expected entry '" + expected + "', found '" + name + "'");
  if (r.u32() == 0) return Tensor();
  Shape4 s;
  s.n = static_cast<int>(r.i64());
  s.c = static_cast<int>(r.i64());
  s.h = static_cast<int>(r.i64());
  s.w = static_cast<int>(r.i64());
  const bool rg = r.u32() != 0;
  std::vector<Real> v = r.reals();
  if (v.size() != s.numel()) throw Error("checkpoint: entry '" + name + "' has wrong size");
  return Tensor::from_data(s, std::move(v), rg);
}

void write_branch(Writer& w, const std::string& p, const RCBranch& b) {
  w.u32(b.trainable);
  w.u32(b.merged);
  write_tensor(w, p + ".conv.weight", b.conv.weight);
  write_tensor(w, p + ".conv.bias", b.conv.bias);
  w.i64(b.conv.stride);
  w.i64(b.conv.padding);
  write_tensor(w, p + ".norm.gamma", b.norm.gamma);
  write_tensor(w, p + ".norm.beta", b.norm.beta);
  w.reals(b.norm.running_mean);
  w.reals(b.norm.running_var);
  w.real(b.norm.eps);
  w.real(b.norm.momentum);
}

RCBranch read_branch(Reader& r, const std::string& p) {
  RCBranch b;
  b.trainable = r.u32() != 0;
  b.merged = r.u32() != 0;
  b.conv.weight = read_tensor(r, p + ".conv.weight");
  b.conv.bias = read_tensor(r, p + ".conv.bias");
  b.conv.stride = static_cast<int>(r.i64());
  b.conv.padding = static_cast<int>(r.i64());
  b.norm.gamma = read_tensor(r, p + ".norm.gamma");
  b.norm.beta = read_tensor(r, p + ".norm.beta");
  b.norm.running_mean = r.reals();
  b.norm.running_var = r.reals();
  b.norm.eps = r.real();
  b.norm.momentum = r.real();
  return b;
}

void write_block(Writer& w, const std::string& p, const RCBlock& b) {
  w.u32(b.two_branch);
  w.u32(b.mode == BlockMode::kInference);
  w.real(b.fusion_weights[0]);
  w.real(b.fusion_weights[1]);
  write_branch(w, p + ".a", b.branch_a);
  write_branch(w, p + ".b", b.branch_b);
}

RCBlock read_block(Reader& r, const std::string& p) {
  RCBlock b;
  b.two_branch = r.u32() != 0;
  b.mode = r.u32() ? BlockMode::kInference : BlockMode::kTraining;
  b.fusion_weights[0] = r.real();
  b.fusion_weights[1] = r.real();
  b.branch_a = read_branch(r, p + ".a");
  b.branch_b = read_branch(r, p + ".b");
  return b;
}

void write_network(Writer& w, const SegNetwork& net) {
  const ArchSpec& a = net.arch();
  w.i64(a.in_channels);
  w.u64(a.stages.size());
  for (const auto& s : a.stages) {
    w.i64(s.n_blocks);
    w.i64(s.channels);
    w.u32(s.downsample);
  }
  w.i64(a.decoder_channels);
  w.u32(a.rc);
  w.real(a.head_init_shift);
  w.i64(net.head_channels());
  for (std::size_t s = 0; s < net.stages.size(); ++s)
    for (std::size_t i = 0; i < net.stages[s].size(); ++i)
      write_block(w, "stage" + std::to_string(s) + ".block" + std::to_string(i), net.stages[s][i]);
  write_block(w, "decoder", net.decoder);
  write_tensor(w, "head.weight", net.head.weight);
  write_tensor(w, "head.bias", net.head.bias);
}

SegNetwork read_network(Reader& r) {
  ArchSpec a;
  a.in_channels = static_cast<int>(r.i64());
  a.stages.resize(r.u64());
  for (auto& s : a.stages) {
    s.n_blocks = static_cast<int>(r.i64());
    s.channels = static_cast<int>(r.i64());
    s.downsample = r.u32() != 0;
  }
  a.decoder_channels = static_cast<int>(r.i64());
  a.rc = r.u32() != 0;
  a.head_init_shift = r.real();
  const int head = static_cast<int>(r.i64());
  Rng scratch(0);
  SegNetwork net = SegNetwork::create(a, head, scratch);
  for (std::size_t s = 0; s < net.stages.size(); ++s)
    for (std::size_t i = 0; i < net.stages[s].size(); ++i)
      net.stages[s][i] = read_block(r, "stage" + std::to_string(s) + ".block" + std::to_string(i));
  net.decoder = read_block(r, "decoder");
  net.head.weight = read_tensor(r, "head.weight");
  net.head.bias = read_tensor(r, "head.bias");
  return net;
}

void write_history(Writer& w, const TrainHistory& h) {
  w.u64(h.iterations.size());
  for (const auto& it : h.iterations) {
    w.i64(it.step);
    w.i64(it.epoch);
    w.i64(it.iteration);
    for (Real v : {it.lr, it.total, it.ce, it.kd, it.skd, it.ckd}) w.real(v);
  }
  w.u64(h.epochs.size());
  for (const auto& e : h.epochs) {
    w.i64(e.step);
    w.i64(e.epoch);
    w.real(e.mean_loss);
    w.real(e.holdout_miou);
  }
  w.u64(h.executed_terms.size());
  for (const auto& s : h.executed_terms) w.str(s);
}

TrainHistory read_history(Reader& r) {
  TrainHistory h;
  h.iterations.resize(r.u64());
  for (auto& it : h.iterations) {
    it.step = static_cast<int>(r.i64());
    it.epoch = static_cast<int>(r.i64());
    it.iteration = static_cast<int>(r.i64());
    for (Real* v : {&it.lr, &it.total, &it.ce, &it.kd, &it.skd, &it.ckd}) *v = r.real();
  }
  h.epochs.resize(r.u64());
  for (auto& e : h.epochs) {
    e.step = static_cast<int>(r.i64());
    e.epoch = static_cast<int>(r.i64());
    e.mean_loss = r.real();
    e.holdout_miou = r.real();
  }
  const std::uint64_t n = r.u64();
  for (std::uint64_t i = 0; i < n; ++i) h.executed_terms.insert(r.str());
  return h;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u64(ckpt.config_hash);

  const TrainState& st = ckpt.state;
  w.i64(st.step_index);
  w.i64(st.epoch);
  w.real(st.optimizer.base_lr);
  w.real(st.optimizer.momentum);
  w.i64(st.optimizer.iteration);
  w.i64(st.optimizer.total_iterations);
  w.real(st.optimizer.poly_power);
  w.u64(st.velocity.size());
  for (const auto& v : st.velocity) w.reals(v);
  w.str(st.rng_state);
  w.u64(st.rng_seed);

  w.u64(ckpt.networks.size());
  for (const auto& [name, net] : ckpt.networks) {
    w.str(name);
    write_network(w, net);
  }
  write_history(w, ckpt.history);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + tmp.string() + "'");
    out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
    if (!out) throw Error("failed writing checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash,
                           bool force) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());
  char magic[8];
  r.bytes(magic, sizeof magic);
  if (!std::equal(magic, magic + 8, kMagic))
    throw Error("'" + path.string() + "' is not an rcil checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw Error("checkpoint version " + std::to_string(version) + " not supported (expected " +
                std::to_string(kCheckpointVersion) + ")");
  Checkpoint ck;
  ck.config_hash = r.u64();
  if (ck.config_hash != expected_hash && !force) {
    char buf[80];
    std::snprintf(buf, sizeof buf, "%016llx vs %016llx",
                  static_cast<unsigned long long>(ck.config_hash),
                  static_cast<unsigned long long>(expected_hash));
    throw Error("checkpoint config hash mismatch (" + std::string(buf) +
                "); pass force to load anyway");
  }
  TrainState& st = ck.state;
  st.step_index = static_cast<int>(r.i64());
  st.epoch = static_cast<int>(r.i64());
  st.optimizer.base_lr = r.real();
  st.optimizer.momentum = r.real();
  st.optimizer.iteration = r.i64();
  st.optimizer.total_iterations = r.i64();
  st.optimizer.poly_power = r.real();
  st.velocity.resize(r.u64());
  for (auto& v : st.velocity) v = r.reals();
  st.rng_state = r.str();
  st.rng_seed = r.u64();

  const std::uint64_t nets = r.u64();
  for (std::uint64_t i = 0; i < nets; ++i) {
    std::string name = r.str();
    ck.networks.emplace(std::move(name), read_network(r));
  }
  ck.history = read_history(r);
  if (!r.done()) throw Error("checkpoint has trailing bytes");
  return ck;
}

// ---------------------------------------------------------------------------
// CSV output.

namespace {

std::string fmt(Real v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string fmt_g(Real v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

std::string results_csv(const ExperimentConfig& cfg, const std::vector<StepResult>& steps) {
  std::string out = "format_version,run_id,method,step,group,miou,train_images\n";
  const std::string prefix = std::to_string(kResultsFormatVersion) + "," + cfg.run_id() + "," +
                             to_string(cfg.method.name) + ",";
  for (const auto& s : steps) {
    const std::pair<const char*, Real> rows[] = {
        {"old", s.report.miou_old}, {"new", s.report.miou_new}, {"all", s.report.miou_all}};
    for (const auto& [group, v] : rows)
      out += prefix + std::to_string(s.step) + "," + group + "," + fmt(v) + "," +
             std::to_string(s.train_images) + "\n";
  }
  return out;
}

std::string curves_csv(const std::vector<StepResult>& steps) {
  std::string out = "step,miou_old,miou_new,miou_all,inference_macs,inference_params\n";
  for (const auto& s : steps)
    out += std::to_string(s.step) + "," + fmt(s.report.miou_old) + "," + fmt(s.report.miou_new) +
           "," + fmt(s.report.miou_all) + "," + std::to_string(s.inference_macs) + "," +
           std::to_string(s.inference_params) + "\n";
  return out;
}

std::string history_csv(const TrainHistory& h) {
  std::string out = "step,epoch,iteration,lr,total,ce,kd,skd,ckd\n";
  for (const auto& it : h.iterations)
    out += std::to_string(it.step) + "," + std::to_string(it.epoch) + "," +
           std::to_string(it.iteration) + "," + fmt_g(it.lr) + "," + fmt_g(it.total) + "," +
           fmt_g(it.ce) + "," + fmt_g(it.kd) + "," + fmt_g(it.skd) + "," + fmt_g(it.ckd) + "\n";
  return out;
}

std::size_t inference_macs(const SegNetwork& net, int height, int width) {
  const SegNetwork m = net.merged();
  NoGradGuard guard;
  const OpCounter saved = op_counter();
  op_counter().reset();
  ForwardResult r = m.forward_eval(Tensor::zeros({1, m.arch().in_channels, height, width}));
  const std::uint64_t total = op_counter().macs;
  op_counter() = saved;
  const Shape4 ts = r.taps.back().shape();
  const std::uint64_t head = static_cast<std::uint64_t>(m.head.weight.numel()) * ts.h * ts.w;
  return static_cast<std::size_t>(total - head);
}

}  // namespace rcil
