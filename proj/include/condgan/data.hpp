#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "condgan/models.hpp"
#include "condgan/random.hpp"
#include "condgan/tensor.hpp"

namespace condgan {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

inline constexpr double kMaxShift = 0.15;     // fraction of the image size
inline constexpr double kMaxLogScale = 0.2;
inline constexpr std::size_t kTransformDim = 3;

// Box-assembly chair; every field is a deterministic function of class_id.
struct ShapeSpec {
  std::size_t class_id = 0;
  double seat_width = 0.9;
  double seat_depth = 0.8;
  double seat_height = 0.45;  // top of the seat above the floor
  double seat_thickness = 0.1;
  double back_height = 0.6;
  double back_thickness = 0.08;
  double leg_thickness = 0.08;
  bool pedestal = false;  // one central column instead of four legs
  bool armrests = false;
  std::array<double, 3> color{0.8, 0.2, 0.2};  // linear RGB in [0, 1]

  static ShapeSpec for_class(std::size_t class_id);
};

struct ViewPoint {
  double azimuth = 0.0;   // radians, [0, 2 pi)
  double altitude = 0.0;  // radians, [-pi/4, pi/4]
};

struct Transform {
  double dx = 0.0;
  double dy = 0.0;
  double log_scale = 0.0;

  std::array<double, kTransformDim> vector() const { return {dx, dy, log_scale}; }
  bool within_bounds() const;
};

struct Sample {
  std::size_t height = 0, width = 0;
  std::vector<float> rgb;   // [3, H, W] in [-1, 1], background +1
  std::vector<float> mask;  // [H, W] in {0, 1}
  std::size_t class_id = 0;
  ViewPoint view;
  Transform transform;
};

// [sin az, cos az, sin alt, cos alt]
std::array<double, 4> encode_view(double azimuth, double altitude);
// Inverse of encode_view with azimuth in [0, 2 pi). Throws ValidationError
// when either sin/cos pair is off the unit circle by more than 1e-6.
ViewPoint decode_view(std::span<const double> v);

// Orthographic ray-cast of the chair at the given view, then the image-plane
// affine map. Throws ValidationError for empty extents or an out-of-range
// altitude / transform.
Sample render(const ShapeSpec& spec, const ViewPoint& view, const Transform& tr,
              std::size_t height, std::size_t width);

struct DatasetConfig {
  std::uint64_t seed = 1;
  std::size_t num_classes = 10;
  std::size_t azimuths = 36;
  std::size_t altitudes = 3;
  std::size_t transforms = 2;
  std::size_t image_size = 32;
  double min_altitude_deg = 10.0;
  double max_altitude_deg = 30.0;

  void validate() const;
};

struct SampleKey {
  std::size_t class_id = 0;
  std::size_t azimuth_index = 0;
  std::size_t altitude_index = 0;
  std::size_t transform_index = 0;
};

// Samples enumerated class-major, then azimuth, altitude, transform. Every
// sample is a pure function of (seed, index).
class Dataset {
 public:
  explicit Dataset(DatasetConfig config);

  const DatasetConfig& config() const { return config_; }
  std::size_t size() const;
  SampleKey key(std::size_t index) const;
  double azimuth(std::size_t azimuth_index) const;
  double altitude(std::size_t altitude_index) const;
  std::vector<double> altitude_levels() const;
  Transform transform(std::size_t index) const;
  ViewPoint view(std::size_t index) const;
  // Odd azimuth indices are held out.
  bool is_test(std::size_t index) const;

  // Throws IndexError past the end.
  Sample at(std::size_t index) const;
  // Renders everything, in parallel by index.
  std::vector<Sample> render_all() const;

 private:
  DatasetConfig config_;
  std::vector<ShapeSpec> specs_;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Every second azimuth index goes to test. Throws ConfigError for an odd
// azimuth count.
Split holdout_split(const Dataset& data);

// Conditions of a single sample as plain vectors.
std::vector<double> one_hot(std::size_t class_id, std::size_t num_classes);

template <typename T>
struct Batch {
  Conditions<T> cond;
  Tensor<T> rgb;   // [N, 3, H, W]
  Tensor<T> mask;  // [N, 1, H, W]
};

// Stacks pre-rendered samples into tensors.
template <typename T>
Batch<T> make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices,
                    std::size_t num_classes);

// Conditions for arbitrary (class blend, view, transform) queries.
template <typename T>
Conditions<T> make_conditions(const std::vector<std::vector<double>>& classes,
                              const std::vector<ViewPoint>& views,
                              const std::vector<Transform>& transforms);

template <typename T>
struct Negatives {
  Tensor<T> c;  // uniformly drawn wrong classes
  Tensor<T> v;  // fresh views: uniform azimuth, altitude from the dataset levels
  Tensor<T> t;  // fresh transforms, uniform within bounds
};

template <typename T>
Negatives<T> sample_negatives(const Conditions<T>& cond, const std::vector<double>& altitude_levels,
                              Rng& rng);

Transform random_transform(Rng& rng);

// P6 / P5 encoders. rgb values in [-1, 1] map linearly to [0, 255]; mask
// values in [0, 1] map to [0, 255].
std::string encode_ppm(std::span<const float> rgb, std::size_t height, std::size_t width);
std::string encode_pgm(std::span<const float> mask, std::size_t height, std::size_t width);
void write_file(const std::filesystem::path& path, const std::string& bytes);

// Writes images/NNNNNN.ppm, masks/NNNNNN.pgm and manifest.csv under `dir`.
void export_dataset(const Dataset& data, const std::filesystem::path& dir);

inline constexpr const char* kManifestHeader = "index,class,azimuth,altitude,dx,dy,log_scale,split";

}  // namespace condgan
