#include "condgan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "condgan/errors.hpp"
#include "condgan/losses.hpp"

namespace condgan {

namespace {

constexpr double kViewHalfExtent = 1.25;  // object-space units per half image
constexpr double kAmbient = 0.35;

// Snapping to a 1e-9 rad grid makes az and az + 2 pi render bit-identically.
double canonical_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0) a += kTwoPi;
  a = std::round(a * 1e9) / 1e9;
  return a >= kTwoPi ? a - kTwoPi : a;
}

struct Box {
  std::array<double, 3> lo, hi;
};

std::vector<Box> chair_boxes(const ShapeSpec& s) {
  const double hw = s.seat_width / 2, hd = s.seat_depth / 2;
  const double seat_bottom = s.seat_height - s.seat_thickness;
  const double lift = (s.seat_height + s.back_height) / 2;  // centers the chair vertically
  std::vector<Box> boxes;
  auto add = [&](double x0, double x1, double y0, double y1, double z0, double z1) {
    boxes.push_back({{x0, y0 - lift, z0}, {x1, y1 - lift, z1}});
  };
  add(-hw, hw, seat_bottom, s.seat_height, -hd, hd);
  add(-hw, hw, s.seat_height, s.seat_height + s.back_height, -hd, -hd + s.back_thickness);
  const double lt = s.leg_thickness;
  if (s.pedestal) {
    const double c = lt * 1.2;
    add(-c, c, 0.06, seat_bottom, -c, c);
    add(-hw * 0.8, hw * 0.8, 0.0, 0.06, -hd * 0.8, hd * 0.8);
  } else {
    for (double sx : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0}) {
        const double x0 = sx < 0 ? -hw : hw - lt, z0 = sz < 0 ? -hd : hd - lt;
        add(x0, x0 + lt, 0.0, seat_bottom, z0, z0 + lt);
      }
  }
  if (s.armrests) {
    const double front = hd * 0.8;
    for (double sx : {-1.0, 1.0}) {
      const double x0 = sx < 0 ? -hw : hw - 0.07;
      add(x0, x0 + 0.07, s.seat_height + 0.18, s.seat_height + 0.25, -hd, front);
      add(x0, x0 + 0.07, s.seat_height, s.seat_height + 0.18, front - 0.07, front);
    }
  }
  return boxes;
}

std::array<double, 3> palette(std::size_t k) {
  static constexpr std::array<std::array<double, 3>, 10> base{{
      {0.85, 0.15, 0.15}, {0.15, 0.30, 0.85}, {0.15, 0.65, 0.20}, {0.90, 0.55, 0.10},
      {0.55, 0.20, 0.75}, {0.10, 0.60, 0.65}, {0.55, 0.35, 0.15}, {0.90, 0.40, 0.60},
      {0.50, 0.55, 0.10}, {0.35, 0.40, 0.50},
  }};
  if (k < base.size()) return base[k];
  // Golden-ratio hue walk, fixed saturation and value.
  const double h = std::fmod(0.618033988749895 * static_cast<double>(k), 1.0) * 6.0;
  const double f = h - std::floor(h), v = 0.85, p = v * 0.2, q = v * (1 - 0.8 * f), t = v * (1 - 0.8 * (1 - f));
  switch (static_cast<int>(h)) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

// Nearest ray/box hit: returns the distance and the outward normal of the
// entry face.
bool intersect(const Box& b, const std::array<double, 3>& o, const std::array<double, 3>& d,
               double& t_hit, std::array<double, 3>& normal) {
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = 0;
  double sign = 0;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(d[i]) < 1e-12) {
      if (o[i] < b.lo[i] || o[i] > b.hi[i]) return false;
      continue;
    }
    double t1 = (b.lo[i] - o[i]) / d[i], t2 = (b.hi[i] - o[i]) / d[i];
    double s = -1.0;  // entering through the low face
    if (t1 > t2) {
      std::swap(t1, t2);
      s = 1.0;
    }
    if (t1 > t_near) {
      t_near = t1;
      axis = i;
      sign = s;
    }
    t_far = std::min(t_far, t2);
  }
  if (t_near > t_far || t_far < 0) return false;
  t_hit = t_near;
  normal = {0, 0, 0};
  normal[axis] = sign;
  return true;
}

std::uint8_t to_byte(double x) {
  return static_cast<std::uint8_t>(std::clamp<long>(std::lround(x * 255.0), 0, 255));
}

}  // namespace

ShapeSpec ShapeSpec::for_class(std::size_t class_id) {
  Rng rng(Rng::derive(0x5EED0C4A1ULL, class_id));
  ShapeSpec s;
  s.class_id = class_id;
  s.seat_width = rng.uniform(0.7, 1.1);
  s.seat_depth = rng.uniform(0.6, 0.95);
  s.seat_height = rng.uniform(0.35, 0.6);
  s.seat_thickness = rng.uniform(0.06, 0.14);
  s.back_height = rng.uniform(0.25, 0.8);
  s.back_thickness = rng.uniform(0.05, 0.12);
  s.leg_thickness = rng.uniform(0.05, 0.12);
  s.pedestal = class_id % 4 == 3;
  s.armrests = class_id % 3 == 1;
  s.color = palette(class_id);
  return s;
}

bool Transform::within_bounds() const {
  return std::abs(dx) <= kMaxShift && std::abs(dy) <= kMaxShift && std::abs(log_scale) <= kMaxLogScale;
}

std::array<double, 4> encode_view(double azimuth, double altitude) {
  return {std::sin(azimuth), std::cos(azimuth), std::sin(altitude), std::cos(altitude)};
}

ViewPoint decode_view(std::span<const double> v) {
  if (v.size() != 4) throw ValidationError("decode_view: expected 4 numbers");
  for (std::size_t i = 0; i < 4; i += 2) {
    const double r = v[i] * v[i] + v[i + 1] * v[i + 1];
    if (std::abs(r - 1.0) > 1e-6)
      throw ValidationError("decode_view: sin/cos pair " + std::to_string(i / 2) + " has squared norm " +
                            std::to_string(r));
  }
  double az = std::atan2(v[0], v[1]);
  if (az < 0) az += kTwoPi;
  if (az >= kTwoPi) az -= kTwoPi;
  return {az, std::atan2(v[2], v[3])};
}

Sample render(const ShapeSpec& spec, const ViewPoint& view, const Transform& tr,
              std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw ValidationError("render: empty image");
  if (std::abs(view.altitude) > kPi / 4 + 1e-12) throw ValidationError("render: altitude outside [-pi/4, pi/4]");
  if (!tr.within_bounds()) throw ValidationError("render: transform outside bounds");

  const auto boxes = chair_boxes(spec);
  const double az = canonical_angle(view.azimuth), alt = view.altitude;
  const double ca = std::cos(az), sa = std::sin(az), ce = std::cos(alt), se = std::sin(alt);
  const double scale = std::exp(tr.log_scale);
  // Light direction in view space, normalized.
  const double ln = std::sqrt(0.4 * 0.4 + 0.6 * 0.6 + 0.7 * 0.7);
  const std::array<double, 3> light{-0.4 / ln, 0.6 / ln, 0.7 / ln};

  // view -> object: Ry(-az) Rx(-alt)
  auto to_object = [&](const std::array<double, 3>& p) {
    const double y1 = p[1] * ce + p[2] * se, z1 = -p[1] * se + p[2] * ce;
    return std::array<double, 3>{p[0] * ca - z1 * sa, y1, p[0] * sa + z1 * ca};
  };
  // object -> view: Rx(alt) Ry(az)
  auto to_view = [&](const std::array<double, 3>& p) {
    const double x1 = p[0] * ca + p[2] * sa, z1 = -p[0] * sa + p[2] * ca;
    return std::array<double, 3>{x1, p[1] * ce - z1 * se, p[1] * se + z1 * ce};
  };
  const auto dir = to_object({0.0, 0.0, -1.0});

  Sample s;
  s.height = height;
  s.width = width;
  s.class_id = spec.class_id;
  s.view = view;
  s.transform = tr;
  const std::size_t plane = height * width;
  s.rgb.assign(3 * plane, 1.0f);
  s.mask.assign(plane, 0.0f);
  for (std::size_t py = 0; py < height; ++py) {
    for (std::size_t px = 0; px < width; ++px) {
      const double u = (static_cast<double>(px) + 0.5) / static_cast<double>(width) * 2.0 - 1.0;
      const double v = 1.0 - (static_cast<double>(py) + 0.5) / static_cast<double>(height) * 2.0;
      const double x = (u - 2.0 * tr.dx) / scale * kViewHalfExtent;
      const double y = (v - 2.0 * tr.dy) / scale * kViewHalfExtent;
      const auto origin = to_object({x, y, 10.0});
      double best = std::numeric_limits<double>::infinity();
      std::array<double, 3> best_normal{};
      for (const auto& b : boxes) {
        double t;
        std::array<double, 3> n;
        if (intersect(b, origin, dir, t, n) && t < best) {
          best = t;
          best_normal = n;
        }
      }
      if (!std::isfinite(best)) continue;
      const auto n = to_view(best_normal);
      const double diffuse = std::max(0.0, n[0] * light[0] + n[1] * light[1] + n[2] * light[2]);
      const double shade = kAmbient + (1.0 - kAmbient) * diffuse;
      const std::size_t i = py * width + px;
      s.mask[i] = 1.0f;
      for (std::size_t c = 0; c < 3; ++c)
        s.rgb[c * plane + i] = static_cast<float>(2.0 * spec.color[c] * shade - 1.0);
    }
  }
  return s;
}

// ---------------------------------------------------------------------------

void DatasetConfig::validate() const {
  if (num_classes < 2) throw ConfigError("dataset: need at least 2 classes");
  if (azimuths == 0 || altitudes == 0 || transforms == 0 || image_size == 0)
    throw ConfigError("dataset: counts must be positive");
  if (std::abs(min_altitude_deg) > 45.0 || std::abs(max_altitude_deg) > 45.0 ||
      min_altitude_deg > max_altitude_deg)
    throw ConfigError("dataset: altitude range must lie in [-45, 45] degrees");
}

Dataset::Dataset(DatasetConfig config) : config_(config) {
  config_.validate();
  for (std::size_t k = 0; k < config_.num_classes; ++k) specs_.push_back(ShapeSpec::for_class(k));
}

std::size_t Dataset::size() const {
  return config_.num_classes * config_.azimuths * config_.altitudes * config_.transforms;
}

SampleKey Dataset::key(std::size_t index) const {
  if (index >= size())
    throw IndexError("dataset: index " + std::to_string(index) + " out of range (size " +
                     std::to_string(size()) + ")");
  SampleKey k;
  k.transform_index = index % config_.transforms;
  index /= config_.transforms;
  k.altitude_index = index % config_.altitudes;
  index /= config_.altitudes;
  k.azimuth_index = index % config_.azimuths;
  k.class_id = index / config_.azimuths;
  return k;
}

double Dataset::azimuth(std::size_t a) const {
  return kTwoPi * static_cast<double>(a) / static_cast<double>(config_.azimuths);
}

double Dataset::altitude(std::size_t l) const {
  const double lo = config_.min_altitude_deg, hi = config_.max_altitude_deg;
  const double deg = config_.altitudes == 1
                         ? (lo + hi) / 2
                         : lo + (hi - lo) * static_cast<double>(l) / static_cast<double>(config_.altitudes - 1);
  return deg * kPi / 180.0;
}

std::vector<double> Dataset::altitude_levels() const {
  std::vector<double> out;
  for (std::size_t l = 0; l < config_.altitudes; ++l) out.push_back(altitude(l));
  return out;
}

Transform Dataset::transform(std::size_t index) const {
  key(index);
  Rng rng(Rng::derive(config_.seed, index));
  return random_transform(rng);
}

ViewPoint Dataset::view(std::size_t index) const {
  const auto k = key(index);
  return {azimuth(k.azimuth_index), altitude(k.altitude_index)};
}

bool Dataset::is_test(std::size_t index) const { return key(index).azimuth_index % 2 == 1; }

Sample Dataset::at(std::size_t index) const {
  const auto k = key(index);
  return render(specs_[k.class_id], view(index), transform(index), config_.image_size, config_.image_size);
}

std::vector<Sample> Dataset::render_all() const {
  std::vector<Sample> out(size());
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = at(static_cast<std::size_t>(i));
  return out;
}

Split holdout_split(const Dataset& data) {
  if (data.config().azimuths % 2 != 0)
    throw ConfigError("holdout_split: azimuth count must be even, got " + std::to_string(data.config().azimuths));
  Split split;
  for (std::size_t i = 0; i < data.size(); ++i) (data.is_test(i) ? split.test : split.train).push_back(i);
  return split;
}

Transform random_transform(Rng& rng) {
  Transform t;
  t.dx = rng.uniform(-kMaxShift, kMaxShift);
  t.dy = rng.uniform(-kMaxShift, kMaxShift);
  t.log_scale = rng.uniform(-kMaxLogScale, kMaxLogScale);
  return t;
}

std::vector<double> one_hot(std::size_t class_id, std::size_t num_classes) {
  if (class_id >= num_classes)
    throw ValidationError("class " + std::to_string(class_id) + " outside [0, " + std::to_string(num_classes) + ")");
  std::vector<double> v(num_classes, 0.0);
  v[class_id] = 1.0;
  return v;
}

template <typename T>
Conditions<T> make_conditions(const std::vector<std::vector<double>>& classes,
                              const std::vector<ViewPoint>& views,
                              const std::vector<Transform>& transforms) {
  const std::size_t n = classes.size();
  if (n == 0 || views.size() != n || transforms.size() != n)
    throw ShapeError("make_conditions: need equally many classes, views and transforms");
  const std::size_t k = classes[0].size();
  std::vector<T> c, v, t;
  for (std::size_t i = 0; i < n; ++i) {
    if (classes[i].size() != k) throw ShapeError("make_conditions: ragged class vectors");
    for (double e : classes[i]) c.push_back(static_cast<T>(e));
    for (double e : encode_view(views[i].azimuth, views[i].altitude)) v.push_back(static_cast<T>(e));
    for (double e : transforms[i].vector()) t.push_back(static_cast<T>(e));
  }
  return {Tensor<T>::from({n, k}, std::move(c)), Tensor<T>::from({n, 4}, std::move(v)),
          Tensor<T>::from({n, kTransformDim}, std::move(t)), Tensor<T>()};
}

template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                    std::size_t num_classes) {
  if (indices.empty()) throw ShapeError("make_batch: empty batch");
  std::vector<std::vector<double>> classes;
  std::vector<ViewPoint> views;
  std::vector<Transform> transforms;
  const std::size_t h = samples.at(indices[0]).height, w = samples.at(indices[0]).width;
  std::vector<T> rgb, mask;
  rgb.reserve(indices.size() * 3 * h * w);
  mask.reserve(indices.size() * h * w);
  for (auto i : indices) {
    const auto& s = samples.at(i);
    if (s.height != h || s.width != w) throw ShapeError("make_batch: mixed image sizes");
    classes.push_back(one_hot(s.class_id, num_classes));
    views.push_back(s.view);
    transforms.push_back(s.transform);
    rgb.insert(rgb.end(), s.rgb.begin(), s.rgb.end());
    mask.insert(mask.end(), s.mask.begin(), s.mask.end());
  }
  const std::size_t n = indices.size();
  return {make_conditions<T>(classes, views, transforms), Tensor<T>::from({n, 3, h, w}, std::move(rgb)),
          Tensor<T>::from({n, 1, h, w}, std::move(mask))};
}

template <typename T>
Negatives<T> sample_negatives(const Conditions<T>& cond, const std::vector<double>& altitude_levels,
                              Rng& rng) {
  if (altitude_levels.empty()) throw ConfigError("sample_negatives: no altitude levels");
  const std::size_t n = cond.batch();
  Negatives<T> out;
  out.c = negative_classes(cond.c, rng);
  std::vector<T> v, t;
  for (std::size_t i = 0; i < n; ++i) {
    const double az = rng.uniform(0.0, kTwoPi);
    const double alt = altitude_levels[rng.uniform_index(altitude_levels.size())];
    for (double e : encode_view(az, alt)) v.push_back(static_cast<T>(e));
    for (double e : random_transform(rng).vector()) t.push_back(static_cast<T>(e));
  }
  out.v = Tensor<T>::from({n, 4}, std::move(v));
  out.t = Tensor<T>::from({n, kTransformDim}, std::move(t));
  return out;
}

std::string encode_ppm(std::span<const float> rgb, std::size_t height, std::size_t width) {
  const std::size_t plane = height * width;
  if (rgb.size() != 3 * plane) throw ShapeError("encode_ppm: expected 3 x H x W values");
  std::string out = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  out.reserve(out.size() + 3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(to_byte((rgb[c * plane + i] + 1.0) / 2.0)));
  return out;
}

std::string encode_pgm(std::span<const float> mask, std::size_t height, std::size_t width) {
  if (mask.size() != height * width) throw ShapeError("encode_pgm: expected H x W values");
  std::string out = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
  for (float m : mask) out.push_back(static_cast<char>(to_byte(m)));
  return out;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("failed writing " + path.string());
}

void export_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "masks");
  const auto n = static_cast<std::ptrdiff_t>(data.size());
  std::vector<std::string> rows(data.size());
  bool failed = false;
  std::string failure;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      const auto s = data.at(i);
      char name[32];
      std::snprintf(name, sizeof name, "%06zu", i);
      write_file(dir / "images" / (std::string(name) + ".ppm"), encode_ppm(s.rgb, s.height, s.width));
      write_file(dir / "masks" / (std::string(name) + ".pgm"), encode_pgm(s.mask, s.height, s.width));
      char row[256];
      std::snprintf(row, sizeof row, "%zu,%zu,%.9f,%.9f,%.9f,%.9f,%.9f,%s", i, s.class_id, s.view.azimuth,
                    s.view.altitude, s.transform.dx, s.transform.dy, s.transform.log_scale,
                    data.is_test(i) ? "test" : "train");
      rows[i] = row;
    } catch (const std::exception& e) {
#pragma omp critical
      {
        failed = true;
        failure = e.what();
      }
    }
  }
  if (failed) throw Error("export_dataset: " + failure);
  std::string manifest = std::string(kManifestHeader) + "\n";
  for (const auto& r : rows) manifest += r + "\n";
  write_file(dir / "manifest.csv", manifest);
}

#define CONDGAN_INSTANTIATE_DATA(T)                                                                   \
  template Conditions<T> make_conditions<T>(const std::vector<std::vector<double>>&,                 \
                                            const std::vector<ViewPoint>&, const std::vector<Transform>&); \
  template Batch<T> make_batch<T>(const std::vector<Sample>&, const std::vector<std::size_t>&, std::size_t); \
  template Negatives<T> sample_negatives<T>(const Conditions<T>&, const std::vector<double>&, Rng&);

CONDGAN_INSTANTIATE_DATA(float)
CONDGAN_INSTANTIATE_DATA(double)

#undef CONDGAN_INSTANTIATE_DATA

}  // namespace condgan
