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

#include "rcil/protocol.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "rcil/ops.hpp"
#include "rcil/rng.hpp"
#include "rcil/seg_model.hpp"

namespace rcil {

std::string to_string(Labeling l) {
  return l == Labeling::kDisjoint ? "disjoint" : "overlapped";
}

Labeling parse_labeling(const std::string& s) {
  if (s == "disjoint") return Labeling::kDisjoint;
  if (s == "overlapped" || s == "overlap") return Labeling::kOverlapped;
  throw Error("unknown labeling mode '" + s + "' (expected disjoint or overlapped)");
}

ScheduleNotation ScheduleNotation::parse(const std::string& text) {
  const auto dash = text.find('-');
  ScheduleNotation n;
  try {
    if (dash == std::string::npos) throw std::invalid_argument("no dash");
    std::size_t used = 0;
    n.first = std::stoi(text.substr(0, dash), &used);
    if (used != dash) throw std::invalid_argument("junk");
    const std::string rest = text.substr(dash + 1);
    n.increment = std::stoi(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("junk");
  } catch (const std::exception&) {
    throw Error("malformed schedule notation '" + text + "' (expected X-Y)");
  }
  if (n.first < 1 || n.increment < 0)
    throw Error("schedule notation '" + text + "' needs X >= 1 and Y >= 0");
  return n;
}

namespace {

std::vector<std::vector<int>> split_steps(const std::string& notation,
                                          const std::vector<int>& items) {
  const ScheduleNotation nt = ScheduleNotation::parse(notation);
  const int total = static_cast<int>(items.size());
  std::vector<std::vector<int>> steps;
  if (nt.increment == 0) {
    if (nt.first != total)
      throw Error("schedule '" + notation + "': X must equal the total " +
                  std::to_string(total) + " when Y = 0");
    steps.push_back(items);
    return steps;
  }
  const int rest = total - nt.first;
  if (rest < nt.increment || rest % nt.increment != 0)
    throw Error("schedule '" + notation + "' does not divide " + std::to_string(total) +
                " items into X + k*Y with k >= 1");
  steps.emplace_back(items.begin(), items.begin() + nt.first);
  for (int start = nt.first; start < total; start += nt.increment)
    steps.emplace_back(items.begin() + start, items.begin() + start + nt.increment);
  return steps;
}

}  // namespace

TaskSchedule build_schedule(const std::string& notation, int n_classes,
                            Labeling labeling, std::vector<int> order) {
  if (n_classes < 1) throw Error("build_schedule: n_classes must be positive");
  if (!order.empty() && order.front() == 0) order.erase(order.begin());
  if (order.empty()) {
    order.resize(n_classes);
    std::iota(order.begin(), order.end(), 1);
  }
  std::vector<int> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < n_classes; ++i)
    if (static_cast<int>(sorted.size()) != n_classes || sorted[i] != i + 1)
      throw Error("class order must be a permutation of 1.." + std::to_string(n_classes));
  TaskSchedule s;
  s.mode = ScheduleMode::kClassIncremental;
  s.labeling = labeling;
  s.n_classes = n_classes;
  s.class_order = order;
  s.steps = split_steps(notation, order);
  return s;
}

TaskSchedule build_domain_schedule(const std::string& notation, int n_domains,
                                   int n_classes) {
  if (n_domains < 1) throw Error("build_domain_schedule: n_domains must be positive");
  std::vector<int> domains(n_domains);
  std::iota(domains.begin(), domains.end(), 0);
  TaskSchedule s;
  s.mode = ScheduleMode::kDomainIncremental;
  s.labeling = Labeling::kOverlapped;
  s.n_classes = n_classes;
  s.class_order.resize(n_classes);
  std::iota(s.class_order.begin(), s.class_order.end(), 1);
  s.steps = split_steps(notation, domains);
  return s;
}

std::vector<int> TaskSchedule::seen_classes(int t) const {
  if (mode == ScheduleMode::kDomainIncremental) return class_order;
  std::vector<int> out;
  for (int s = 0; s <= t && s < num_steps(); ++s)
    out.insert(out.end(), steps[s].begin(), steps[s].end());
  return out;
}

std::vector<int> TaskSchedule::future_classes(int t) const {
  std::vector<int> out;
  if (mode == ScheduleMode::kDomainIncremental) return out;
  for (int s = t + 1; s < num_steps(); ++s)
    out.insert(out.end(), steps[s].begin(), steps[s].end());
  return out;
}

std::vector<int> TaskSchedule::channel_of_class(int t) const {
  std::vector<int> map(n_classes + 1, -1);
  map[0] = 0;
  const auto seen = seen_classes(t);
  for (std::size_t i = 0; i < seen.size(); ++i) map[seen[i]] = static_cast<int>(i) + 1;
  return map;
}

std::vector<int> TaskSchedule::class_of_channel(int t) const {
  std::vector<int> out{0};
  for (int c : seen_classes(t)) out.push_back(c);
  return out;
}

int TaskSchedule::new_class_count(int t) const {
  if (mode == ScheduleMode::kDomainIncremental) return t == 0 ? n_classes : 0;
  return static_cast<int>(steps.at(t).size());
}

ClassPartition TaskSchedule::partition(int t) const {
  ClassPartition p;
  if (mode == ScheduleMode::kDomainIncremental) {
    for (int c = 1; c <= n_classes; ++c)
      (t == 0 ? p.new_classes : p.old_classes).push_back(c);
    return p;
  }
  const int n_old = static_cast<int>(seen_classes(t).size()) - new_class_count(t);
  for (int c = 1; c <= n_old; ++c) p.old_classes.push_back(c);
  for (int c = n_old + 1; c <= n_old + new_class_count(t); ++c) p.new_classes.push_back(c);
  return p;
}

std::vector<std::vector<std::vector<int>>> class_orders() {
  return {
      {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15}, {16}, {17}, {18}, {19}, {20}},
      {{0, 12, 9, 20, 7, 15, 8, 14, 16, 5, 19, 4, 1, 13, 2, 11}, {17}, {3}, {6}, {18}, {10}},
      {{0, 13, 19, 15, 17, 9, 8, 5, 20, 4, 3, 10, 11, 18, 16, 7}, {12}, {14}, {6}, {1}, {2}},
      {{0, 15, 3, 2, 12, 14, 18, 20, 16, 11, 1, 19, 8, 10, 7, 17}, {6}, {5}, {13}, {9}, {4}},
      {{0, 7, 5, 3, 9, 13, 12, 14, 19, 10, 2, 1, 4, 16, 8, 17}, {15}, {18}, {6}, {11}, {20}},
  };
}

std::vector<int> class_order_permutation(char letter, int n_classes) {
  const int idx = letter - 'A';
  if (idx < 0 || idx > 4) throw Error(std::string("unknown class order '") + letter + "'");
  std::vector<int> order;
  if (n_classes == 20) {
    for (const auto& step : class_orders()[idx])
      for (int c : step)
        if (c != 0) order.push_back(c);
    return order;
  }
  order.resize(n_classes);
  std::iota(order.begin(), order.end(), 1);
  if (idx == 0) return order;
  Rng rng(0x5eed0000ull + static_cast<std::uint64_t>(idx));
  rng.shuffle(order.begin(), order.end());
  return order;
}

// ---------------------------------------------------------------------------
// Synthetic scenes.

namespace {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint8_t clamp_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0l, 255l));
}

std::array<double, 3> class_color(int c, int n_classes) {
  const double hue = 6.0 * static_cast<double>(c - 1) / n_classes;
  const double s = 0.85, v = 220.0;
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

}  // namespace

std::uint64_t SynthSceneSpec::hash() const {
  std::uint64_t h = 0x243f6a8885a308d3ull;
  for (std::uint64_t v : {seed, static_cast<std::uint64_t>(height),
                          static_cast<std::uint64_t>(width),
                          static_cast<std::uint64_t>(n_classes),
                          static_cast<std::uint64_t>(min_shapes),
                          static_cast<std::uint64_t>(max_shapes),
                          static_cast<std::uint64_t>(domain_id)})
    h = mix64(h ^ v);
  return h;
}

bool Scene::contains(int label) const {
  return std::find(mask.begin(), mask.end(), static_cast<std::uint8_t>(label)) != mask.end();
}

std::vector<int> Scene::labels() const {
  std::array<bool, 256> present{};
  for (auto v : mask) present[v] = true;
  std::vector<int> out;
  for (int i = 0; i < 256; ++i)
    if (present[i]) out.push_back(i);
  return out;
}

Scene generate_scene(const SynthSceneSpec& spec, std::uint64_t index) {
  if (spec.height < 8 || spec.width < 8) throw Error("scene must be at least 8x8");
  if (spec.n_classes < 1 || spec.n_classes > 254) throw Error("n_classes out of range");
  if (spec.min_shapes < 1 || spec.max_shapes < spec.min_shapes)
    throw Error("invalid shapes_per_image range");
  const int H = spec.height, W = spec.width;
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  Scene sc;
  sc.height = H;
  sc.width = W;
  sc.domain_id = spec.domain_id;
  sc.image.assign(3 * plane, 0);
  sc.mask.assign(plane, 0);

  // Background depends on the domain only; shapes depend on (seed, index).
  Rng bg(mix64(spec.seed ^ mix64(index) ^ mix64(0xd0ull + spec.domain_id)));
  Rng shapes(mix64(spec.seed ^ mix64(index ^ 0xa5a5a5a5ull)));
  const int d = spec.domain_id;
  const double base = 70.0 + 25.0 * (d % 5);
  const std::array<double, 3> tint{12.0 * ((d * 3) % 4) - 18.0, 10.0 * ((d * 5) % 3) - 10.0,
                                   8.0 * ((d * 7) % 5) - 16.0};
  const double bg_noise = 10.0 + 5.0 * (d % 3);
  const double gx = bg.uniform(-0.6, 0.6), gy = bg.uniform(-0.6, 0.6);
  std::vector<double> img(3 * plane);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double grad = gx * (x - W / 2.0) + gy * (y - H / 2.0);
      for (int ch = 0; ch < 3; ++ch)
        img[ch * plane + y * W + x] =
            base + tint[ch] + grad + bg.uniform(-bg_noise, bg_noise);
    }

  const int n_shapes = shapes.range(spec.min_shapes, spec.max_shapes);
  const double min_dim = std::min(H, W);
  for (int s = 0; s < n_shapes; ++s) {
    const int cls = shapes.range(1, spec.n_classes);
    const int kind = shapes.range(0, 2);
    const double size = shapes.uniform(0.18, 0.42) * min_dim;
    const double cx = shapes.uniform(0.15, 0.85) * W;
    const double cy = shapes.uniform(0.15, 0.85) * H;
    const double aspect = shapes.uniform(0.7, 1.4);
    const double rx = 0.5 * size * aspect, ry = 0.5 * size / aspect;
    const auto color = class_color(cls, spec.n_classes);
    // Odd classes carry a stripe texture, even ones a checker texture.
    const int period = 3 + (cls % 3);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        bool inside = false;
        if (kind == 0) inside = std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        else if (kind == 1) inside = dx * dx + dy * dy <= 1.0;
        else inside = dy >= -1.0 && dy <= 1.0 && std::abs(dx) <= 0.5 * (dy + 1.0);
        if (!inside) continue;
        const bool tex = (cls % 2 == 1) ? ((x + y) / period) % 2 == 0
                                        : ((x / period) + (y / period)) % 2 == 0;
        const double shade = tex ? 1.0 : 0.78;
        sc.mask[y * W + x] = static_cast<std::uint8_t>(cls);
        for (int ch = 0; ch < 3; ++ch)
          img[ch * plane + y * W + x] = color[ch] * shade + shapes.uniform(-10.0, 10.0);
      }
  }
  for (std::size_t i = 0; i < img.size(); ++i) sc.image[i] = clamp_u8(img[i]);
  return sc;
}

std::vector<Scene> generate_scenes(const SynthSceneSpec& spec, std::uint64_t first,
                                   std::size_t count) {
  std::vector<Scene> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(spec, first + i));
  return out;
}

void write_dataset_cache(const std::filesystem::path& dir, const SynthSceneSpec& spec,
                         std::span<const Scene> scenes) {
  std::filesystem::create_directories(dir);
  std::ofstream img(dir / "images.bin", std::ios::binary);
  std::ofstream msk(dir / "masks.bin", std::ios::binary);
  std::ofstream dom(dir / "domains.bin", std::ios::binary);
  for (const auto& s : scenes) {
    if (s.height != spec.height || s.width != spec.width)
      throw Error("dataset cache: scene size differs from spec");
    img.write(reinterpret_cast<const char*>(s.image.data()), s.image.size());
    msk.write(reinterpret_cast<const char*>(s.mask.data()), s.mask.size());
    const std::int32_t d = s.domain_id;
    dom.write(reinterpret_cast<const char*>(&d), sizeof(d));
  }
  std::ofstream man(dir / "manifest.txt");
  man << "format_version " << kDatasetCacheVersion << '\n'
      << "spec_hash " << std::hex << spec.hash() << std::dec << '\n'
      << "count " << scenes.size() << '\n'
      << "height " << spec.height << '\n'
      << "width " << spec.width << '\n';
  if (!img || !msk || !dom || !man) throw Error("dataset cache: write failed in " + dir.string());
}

std::vector<Scene> read_dataset_cache(const std::filesystem::path& dir,
                                      const SynthSceneSpec& spec) {
  std::ifstream man(dir / "manifest.txt");
  if (!man) throw Error("dataset cache: no manifest in " + dir.string());
  std::map<std::string, std::string> kv;
  std::string key, value;
  while (man >> key >> value) kv[key] = value;
  if (kv["format_version"] != std::to_string(kDatasetCacheVersion))
    throw Error("dataset cache: unsupported format version " + kv["format_version"]);
  std::ostringstream expect;
  expect << std::hex << spec.hash();
  if (kv["spec_hash"] != expect.str())
    throw Error("dataset cache: spec hash mismatch (cache " + kv["spec_hash"] +
                ", expected " + expect.str() + ")");
  const std::size_t count = std::stoull(kv["count"]);
  const int H = std::stoi(kv["height"]), W = std::stoi(kv["width"]);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::ifstream img(dir / "images.bin", std::ios::binary);
  std::ifstream msk(dir / "masks.bin", std::ios::binary);
  std::ifstream dom(dir / "domains.bin", std::ios::binary);
  std::vector<Scene> out(count);
  for (auto& s : out) {
    s.height = H;
    s.width = W;
    s.image.resize(3 * plane);
    s.mask.resize(plane);
    img.read(reinterpret_cast<char*>(s.image.data()), s.image.size());
    msk.read(reinterpret_cast<char*>(s.mask.data()), s.mask.size());
    std::int32_t d = 0;
    dom.read(reinterpret_cast<char*>(&d), sizeof(d));
    s.domain_id = d;
  }
  if (!img || !msk || !dom) throw Error("dataset cache: truncated arrays in " + dir.string());
  return out;
}

// ---------------------------------------------------------------------------
// Step datasets.

StepDataset filter_and_relabel(std::span<const Scene> raw, const TaskSchedule& sched, int t) {
  if (t < 0 || t >= sched.num_steps())
    throw Error("filter_and_relabel: step " + std::to_string(t) + " out of range");
  StepDataset ds;
  if (sched.mode == ScheduleMode::kDomainIncremental) {
    const std::set<int> domains(sched.steps[t].begin(), sched.steps[t].end());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (!domains.count(raw[i].domain_id)) continue;
      ds.scenes.push_back(raw[i]);
      ds.provenance.push_back(i);
    }
  } else {
    std::array<bool, 256> current{}, future{};
    for (int c : sched.steps[t]) current[c] = true;
    for (int c : sched.future_classes(t)) future[c] = true;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      std::array<bool, 256> present{};
      for (auto v : raw[i].mask) present[v] = true;
      bool has_current = false, has_future = false;
      for (int c = 1; c < 256; ++c) {
        if (!present[c] || c == kIgnoreLabel) continue;
        has_current = has_current || current[c];
        has_future = has_future || future[c];
      }
      if (!has_current) continue;
      if (sched.labeling == Labeling::kDisjoint && has_future) continue;
      Scene s = raw[i];
      for (auto& v : s.mask)
        if (v != kIgnoreLabel && !current[v]) v = 0;
      ds.scenes.push_back(std::move(s));
      ds.provenance.push_back(i);
    }
  }
  if (ds.scenes.empty())
    throw Error("step " + std::to_string(t) + " has no training images (degenerate schedule or seed)");
  return ds;
}

Tensor scenes_to_tensor(std::span<const Scene* const> scenes, const std::vector<bool>& flips) {
  if (scenes.empty()) throw Error("scenes_to_tensor: empty batch");
  const int H = scenes[0]->height, W = scenes[0]->width;
  const int N = static_cast<int>(scenes.size());
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  std::vector<Real> v(static_cast<std::size_t>(N) * 3 * plane);
  for (int n = 0; n < N; ++n) {
    const Scene& s = *scenes[n];
    if (s.height != H || s.width != W) throw ShapeError("scenes_to_tensor: mixed sizes");
    const bool flip = !flips.empty() && flips[n];
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const int sx = flip ? W - 1 - x : x;
          const Real px = s.image[ch * plane + y * W + sx];
          v[(static_cast<std::size_t>(n) * 3 + ch) * plane + y * W + x] = (px / 255.0 - 0.5) / 0.25;
        }
  }
  return Tensor::from_data({N, 3, H, W}, std::move(v));
}

LabelMap scenes_to_labels(std::span<const Scene* const> scenes,
                          const std::vector<int>& channel_of_class,
                          const std::vector<bool>& flips) {
  LabelMap lm;
  lm.n = static_cast<int>(scenes.size());
  lm.h = scenes.empty() ? 0 : scenes[0]->height;
  lm.w = scenes.empty() ? 0 : scenes[0]->width;
  lm.labels.resize(static_cast<std::size_t>(lm.n) * lm.h * lm.w);
  for (int n = 0; n < lm.n; ++n) {
    const bool flip = !flips.empty() && flips[n];
    for (int y = 0; y < lm.h; ++y)
      for (int x = 0; x < lm.w; ++x) {
        const int sx = flip ? lm.w - 1 - x : x;
        const int raw = scenes[n]->mask[y * lm.w + sx];
        int lab = kIgnoreLabel;
        if (raw != kIgnoreLabel) {
          if (raw >= static_cast<int>(channel_of_class.size()) || channel_of_class[raw] < 0)
            throw Error("label " + std::to_string(raw) + " has no head channel at this step");
          lab = channel_of_class[raw];
        }
        lm.labels[(static_cast<std::size_t>(n) * lm.h + y) * lm.w + x] = lab;
      }
  }
  return lm;
}

// ---------------------------------------------------------------------------
// Metrics.

ConfusionMatrix::ConfusionMatrix(int n_classes)
    : k_(n_classes + 1), counts_(static_cast<std::size_t>(k_) * k_, 0) {}

void ConfusionMatrix::add(int truth, int pred) {
  if (truth == kIgnoreLabel) return;
  if (truth < 0 || truth >= k_ || pred < 0 || pred >= k_)
    throw Error("confusion matrix: label out of range");
  counts_[static_cast<std::size_t>(truth) * k_ + pred] += 1;
}

IoUReport ConfusionMatrix::report(const std::vector<int>& old_group,
                                  const std::vector<int>& new_group) const {
  IoUReport r;
  r.old_group = old_group;
  r.new_group = new_group;
  auto iou_of = [&](int c, bool& present) {
    std::uint64_t tp = counts_[static_cast<std::size_t>(c) * k_ + c], fp = 0, fn = 0;
    for (int j = 0; j < k_; ++j) {
      if (j == c) continue;
      fn += counts_[static_cast<std::size_t>(c) * k_ + j];
      fp += counts_[static_cast<std::size_t>(j) * k_ + c];
    }
    const std::uint64_t denom = tp + fp + fn;
    present = denom > 0;
    return present ? static_cast<Real>(tp) / static_cast<Real>(denom) : 0.0;
  };
  auto group_mean = [&](const std::vector<int>& group) {
    Real s = 0.0;
    int n = 0;
    for (int c : group) {
      bool present = false;
      const Real v = iou_of(c, present);
      if (!present) continue;
      r.per_class_iou[c] = v;
      s += v;
      ++n;
    }
    return n ? s / n : std::numeric_limits<Real>::quiet_NaN();
  };
  r.miou_old = group_mean(old_group);
  r.miou_new = group_mean(new_group);
  std::vector<int> all = old_group;
  all.insert(all.end(), new_group.begin(), new_group.end());
  r.miou_all = group_mean(all);
  return r;
}

std::string IoUReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "class_id,iou,group\n";
  for (const auto& [c, v] : per_class_iou) {
    const bool is_old = std::find(old_group.begin(), old_group.end(), c) != old_group.end();
    os << c << ',' << v << ',' << (is_old ? "old" : "new") << '\n';
  }
  return os.str();
}

IoUReport evaluate(const SegNetwork& net, std::span<const Scene> val,
                   const TaskSchedule& sched, int t, int batch_size) {
  const std::vector<int> cls_of_ch = sched.class_of_channel(t);
  if (net.head_channels() != static_cast<int>(cls_of_ch.size()))
    throw Error("evaluate: head has " + std::to_string(net.head_channels()) +
                " channels, step expects " + std::to_string(cls_of_ch.size()));
  std::vector<bool> seen(256, false);
  seen[0] = true;
  for (int c : cls_of_ch) seen[c] = true;

  ConfusionMatrix cm(sched.n_classes);
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < val.size(); start += batch_size) {
    const std::size_t end = std::min(val.size(), start + batch_size);
    std::vector<const Scene*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(&val[i]);
    Tensor logits = net.forward_eval(scenes_to_tensor(batch)).logits;
    const Shape4 s = logits.shape();
    const std::size_t plane = s.plane();
    auto z = logits.data();
    for (int n = 0; n < s.n; ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        int best = 0;
        Real bv = z[(static_cast<std::size_t>(n) * s.c) * plane + i];
        for (int c = 1; c < s.c; ++c) {
          const Real v = z[(static_cast<std::size_t>(n) * s.c + c) * plane + i];
          if (v > bv) {
            bv = v;
            best = c;
          }
        }
        const int truth = batch[n]->mask[i];
        if (truth == kIgnoreLabel || !seen[truth]) continue;
        cm.add(truth, cls_of_ch[best]);
      }
  }
  std::vector<int> old_group{0}, new_group;
  if (sched.mode == ScheduleMode::kDomainIncremental) {
    for (int c : sched.class_order) old_group.push_back(c);
  } else {
    for (int c : sched.steps[0]) old_group.push_back(c);
    for (int s = 1; s <= t; ++s)
      for (int c : sched.steps[s]) new_group.push_back(c);
  }
  return cm.report(old_group, new_group);
}

}  // namespace rcil
