#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "anomex/error.hpp"
#include "anomex/image.hpp"
#include "anomex/onnx.hpp"
#include "anomex/raster_io.hpp"

namespace anomex::dataset {

namespace fs = std::filesystem;

enum class Split { train, test };

inline const char* to_string(Split s) { return s == Split::train ? "train" : "test"; }

struct SampleRecord {
  std::string sample_id;  // "<split>/<defect_type>/<stem>"
  std::string category;
  Split split = Split::test;
  std::string defect_type;  // "good" or a defect name
  fs::path image_path;
  std::optional<fs::path> mask_path;

  bool is_good() const noexcept { return defect_type == "good"; }
};

struct DatasetListing {
  std::vector<SampleRecord> records;
  std::vector<std::string> warnings;

  std::vector<SampleRecord> split(Split s) const {
    std::vector<SampleRecord> out;
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [s](const SampleRecord& r) { return r.split == s; });
    return out;
  }
};

namespace detail {

inline std::vector<fs::path> sorted_entries(const fs::path& dir, bool directories) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".png")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/// Lists an MVTec-style tree:
///   <root>/<category>/train/good/*.png
///   <root>/<category>/test/<defect>/*.png
///   <root>/<category>/ground_truth/<defect>/<stem>_mask.png
/// Anomalous test images without a mask are kept but listed in warnings.
inline DatasetListing scan_dataset(const fs::path& root, const std::string& category) {
  const fs::path base = root / category;
  const fs::path train = base / "train";
  const fs::path test = base / "test";
  if (!fs::is_directory(base)) throw IoError("dataset category not found: " + base.string());
  if (!fs::is_directory(train) || !fs::is_directory(test)) {
    throw IoError("malformed dataset tree (need train/ and test/): " + base.string());
  }
  DatasetListing listing;
  for (const auto& defect_dir : detail::sorted_entries(train, true)) {
    const std::string defect = defect_dir.filename().string();
    if (defect != "good") {
      throw IoError("malformed dataset tree: training split contains non-good class '" + defect + "'");
    }
    for (const auto& img : detail::sorted_entries(defect_dir, false)) {
      listing.records.push_back({"train/good/" + img.stem().string(), category, Split::train, "good", img, {}});
    }
  }
  for (const auto& defect_dir : detail::sorted_entries(test, true)) {
    const std::string defect = defect_dir.filename().string();
    for (const auto& img : detail::sorted_entries(defect_dir, false)) {
      SampleRecord rec{"test/" + defect + "/" + img.stem().string(), category, Split::test, defect, img, {}};
      if (defect != "good") {
        const fs::path mask = base / "ground_truth" / defect / (img.stem().string() + "_mask.png");
        if (fs::is_regular_file(mask)) {
          rec.mask_path = mask;
        } else {
          listing.warnings.push_back("missing ground-truth mask for " + rec.sample_id + " (expected " +
                                     mask.string() + ")");
        }
      }
      listing.records.push_back(std::move(rec));
    }
  }
  return listing;
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
inline RgbImage resize_bilinear(const RgbImage& src, std::size_t out_h, std::size_t out_w) {
  if (src.height() == out_h && src.width() == out_w) return src;
  RgbImage out(out_h, out_w);
  const double sy = static_cast<double>(src.height()) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width()) / static_cast<double>(out_w);
  const auto max_y = static_cast<double>(src.height() - 1);
  const auto max_x = static_cast<double>(src.width() - 1);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width() - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = src(y0, x0, c) * (1 - wx) + src(y0, x1, c) * wx;
        const double bottom = src(y1, x0, c) * (1 - wx) + src(y1, x1, c) * wx;
        out(y, x, c) = std::clamp(top * (1 - wy) + bottom * wy, 0.0, 1.0);
      }
    }
  }
  return out;
}

inline BinaryMask resize_nearest(const BinaryMask& src, std::size_t out_h, std::size_t out_w) {
  if (src.height() == out_h && src.width() == out_w) return src;
  BinaryMask out(out_h, out_w);
  const double sy = static_cast<double>(src.height()) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width()) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const auto yy = std::min(static_cast<std::size_t>((static_cast<double>(y) + 0.5) * sy), src.height() - 1);
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto xx = std::min(static_cast<std::size_t>((static_cast<double>(x) + 0.5) * sx), src.width() - 1);
      out(y, x) = src(yy, xx);
    }
  }
  return out;
}

struct LoadedSample {
  RgbImage image;
  std::optional<BinaryMask> mask;  // present for anomalous samples with a ground truth
};

inline LoadedSample load_and_resize(const SampleRecord& record, std::size_t side = 128) {
  if (side == 0) throw InvalidArgument("load_and_resize: side must be > 0");
  LoadedSample out;
  try {
    out.image = resize_bilinear(load_png(record.image_path), side, side);
    if (record.mask_path) out.mask = resize_nearest(load_png_mask(*record.mask_path), side, side);
  } catch (const IoError& e) {
    throw IoError(record.sample_id + ": " + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reconstruction providers

struct ReconstructionRequest {
  std::string sample_id;
  const RgbImage* image = nullptr;
};

/// Black-box reconstructor. Outputs match input dimensions, lie in [0,1] and
/// are deterministic per input.
class ReconstructionProvider {
 public:
  virtual ~ReconstructionProvider() = default;

  virtual std::vector<RgbImage> reconstruct(std::span<const ReconstructionRequest> batch) const = 0;

  /// False when reconstruct() must not be called from several threads at once.
  virtual bool concurrent() const noexcept { return true; }

  RgbImage reconstruct_one(const std::string& sample_id, const RgbImage& image) const {
    const ReconstructionRequest req{sample_id, &image};
    return std::move(reconstruct(std::span<const ReconstructionRequest>(&req, 1)).front());
  }
};

/// Reconstructions stored on disk as <dir>/<sample_id>.f32 (preferred) or .png.
class CachedProvider final : public ReconstructionProvider {
 public:
  explicit CachedProvider(fs::path directory) : dir_(std::move(directory)) {
    if (!fs::is_directory(dir_)) throw IoError("reconstruction cache not found: " + dir_.string());
  }

  const fs::path& directory() const noexcept { return dir_; }

  std::vector<RgbImage> reconstruct(std::span<const ReconstructionRequest> batch) const override {
    std::vector<RgbImage> out;
    out.reserve(batch.size());
    for (const auto& req : batch) {
      const fs::path f32 = dir_ / (req.sample_id + ".f32");
      const fs::path png = dir_ / (req.sample_id + ".png");
      RgbImage img;
      if (fs::is_regular_file(f32)) {
        img = load_f32<RgbImage>(f32);
      } else if (fs::is_regular_file(png)) {
        img = load_png(png);
      } else {
        throw IoError("no cached reconstruction for sample '" + req.sample_id + "' in " + dir_.string());
      }
      if (req.image && !img.same_shape(*req.image)) {
        throw ShapeError("cached reconstruction for '" + req.sample_id + "' is " +
                         shape_string(img.height(), img.width()) + ", input is " +
                         shape_string(req.image->height(), req.image->width()));
      }
      for (double& v : img.data()) v = std::clamp(v, 0.0, 1.0);
      out.push_back(std::move(img));
    }
    return out;
  }

 private:
  fs::path dir_;
};

/// Writes a reconstruction into the cache layout read by CachedProvider.
inline void store_reconstruction(const fs::path& dir, const std::string& sample_id, const RgbImage& recon) {
  const fs::path path = dir / (sample_id + ".f32");
  fs::create_directories(path.parent_path());
  save_f32(path, recon);
}

enum class TensorLayout { nchw, nhwc };

/// Runs an ONNX encoder-decoder graph (mean-decoded path) per image.
class InferenceProvider final : public ReconstructionProvider {
 public:
  explicit InferenceProvider(const fs::path& model_file, std::size_t side = 128)
      : side_(side), interpreter_(onnx::load_model(model_file)) {
    const auto inputs = interpreter_.runtime_inputs();
    if (inputs.size() != 1) {
      throw ModelError(model_file.string() + ": expected exactly one graph input, found " +
                       std::to_string(inputs.size()));
    }
    const auto& outputs = interpreter_.model().graph.outputs;
    if (outputs.empty()) throw ModelError(model_file.string() + ": graph has no outputs");
    input_name_ = inputs.front().name;
    const auto layout = detect(inputs.front());
    if (!layout) throw ModelError(model_file.string() + ": incompatible input shape: " + mismatch(inputs.front()));
    layout_ = *layout;
    batched_ = inputs.front().dims.size() == 4;
    if (outputs.front().has_shape && !outputs.front().dims.empty() && detect(outputs.front()) != layout_) {
      throw ModelError(model_file.string() + ": incompatible output shape: " + mismatch(outputs.front()));
    }
  }

  TensorLayout layout() const noexcept { return layout_; }

  std::vector<RgbImage> reconstruct(std::span<const ReconstructionRequest> batch) const override {
    std::vector<RgbImage> out;
    out.reserve(batch.size());
    for (const auto& req : batch) {
      if (!req.image) throw InvalidArgument("InferenceProvider needs the input image for '" + req.sample_id + "'");
      out.push_back(run(*req.image));
    }
    return out;
  }

 private:
  std::vector<std::int64_t> expected(TensorLayout l, bool batched) const {
    const auto s = static_cast<std::int64_t>(side_);
    std::vector<std::int64_t> dims = l == TensorLayout::nchw ? std::vector<std::int64_t>{3, s, s}
                                                             : std::vector<std::int64_t>{s, s, 3};
    if (batched) dims.insert(dims.begin(), -1);
    return dims;
  }

  std::optional<TensorLayout> detect(const onnx::ValueInfo& vi) const {
    if (vi.dims.size() != 3 && vi.dims.size() != 4) return std::nullopt;
    const bool batched = vi.dims.size() == 4;
    if (batched && vi.dims[0] > 1) return std::nullopt;
    for (auto l : {TensorLayout::nchw, TensorLayout::nhwc}) {
      const auto want = expected(l, batched);
      bool ok = true;
      for (std::size_t i = batched ? 1 : 0; i < want.size(); ++i) ok = ok && vi.dims[i] == want[i];
      if (ok) return l;
    }
    return std::nullopt;
  }

  std::string mismatch(const onnx::ValueInfo& vi) const {
    auto fmt = [](const std::vector<std::int64_t>& d) {
      std::string s = "[";
      for (std::size_t i = 0; i < d.size(); ++i) s += (i ? "," : "") + (d[i] < 0 ? std::string("N") : std::to_string(d[i]));
      return s + "]";
    };
    return "expected " + fmt(expected(TensorLayout::nchw, true)) + " or " + fmt(expected(TensorLayout::nhwc, true)) +
           ", found " + fmt(vi.dims);
  }

  RgbImage run(const RgbImage& img) const {
    if (img.height() != side_ || img.width() != side_) {
      throw ShapeError("model expects " + shape_string(side_, side_) + " images, got " +
                       shape_string(img.height(), img.width()));
    }
    const auto s = static_cast<std::int64_t>(side_);
    onnx::Tensor t;
    t.shape = layout_ == TensorLayout::nchw ? std::vector<std::int64_t>{3, s, s} : std::vector<std::int64_t>{s, s, 3};
    if (batched_) t.shape.insert(t.shape.begin(), 1);
    t.data.resize(img.data().size());
    const std::size_t plane = side_ * side_;
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        t.data[layout_ == TensorLayout::nchw ? c * plane + p : p * 3 + c] = img.at_pixel(p, c);
      }
    }
    const onnx::Tensor y = interpreter_.run({{input_name_, std::move(t)}}).front();
    if (y.numel() != img.data().size()) {
      throw ModelError("model output has " + std::to_string(y.numel()) + " values, expected " +
                       std::to_string(img.data().size()));
    }
    RgbImage out(side_, side_);
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = y.data[layout_ == TensorLayout::nchw ? c * plane + p : p * 3 + c];
        out.at_pixel(p, c) = std::clamp(static_cast<double>(static_cast<float>(v)), 0.0, 1.0);
      }
    }
    return out;
  }

  std::size_t side_;
  onnx::Interpreter interpreter_;
  std::string input_name_;
  TensorLayout layout_ = TensorLayout::nchw;
  bool batched_ = true;
};

inline std::unique_ptr<ReconstructionProvider> cached_provider(const fs::path& directory) {
  return std::make_unique<CachedProvider>(directory);
}

inline std::unique_ptr<ReconstructionProvider> inference_provider(const fs::path& model_file, std::size_t side = 128) {
  return std::make_unique<InferenceProvider>(model_file, side);
}

}  // namespace anomex::dataset
