#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gocnn/losses.hpp"
#include "gocnn/tensor.hpp"

namespace gocnn {

// One labeled image with optional privileged segmentation. A sample without
// privileged annotation carries the all-zeros sentinel mask.
struct SampleRecord {
  Tensor image;  // [3,H,W], values on the 1/255 grid in [0,1]
  int label = 0;
  Mask mask_fg;  // image resolution; zero sentinel iff !has_privileged
  bool has_privileged = false;
};

enum class BackgroundMode {
  informative,  // class-correlated texture; background carries label signal
  noise,        // uniform pixel noise; background carries no signal
  blank,        // black background: foreground-only images
};

const char* background_mode_name(BackgroundMode mode);
BackgroundMode background_mode_from_name(const std::string& name);

struct CorpusSpec {
  int num_classes = 8;
  int per_class = 200;
  int image_size = 32;
  double privileged_fraction = 1.0;
  BackgroundMode background = BackgroundMode::informative;
  // Probability that an informative background draws a texture family other
  // than its class's own.
  double texture_mix = 0.3;
  uint64_t seed = 0;
};

// Class-determined shape vocabulary; class k renders shape k.
enum class ShapeClass : int { disk, square, triangle, cross, ring, bar, ell, diamond };
constexpr int kShapeClassCount = 8;

struct ShapeGeometry {
  ShapeClass kind = ShapeClass::disk;
  double cx = 0.0, cy = 0.0;  // center, pixel units
  double radius = 0.0;        // half-extent
};

// The geometry generate() uses for sample `index`; deterministic in
// (spec.seed, index) and independent of the privileged fraction.
ShapeGeometry sample_geometry(const CorpusSpec& spec, int index);

// Binary membership of pixel centers (x+0.5, y+0.5) in the shape.
Tensor rasterize_shape(const ShapeGeometry& geometry, int height, int width);

// Renders the full corpus: stratified labels, exact masks, privileged flags
// for round(p*per_class) samples per class. A pure function of the spec.
std::vector<SampleRecord> generate(const CorpusSpec& spec);

// Block-averages an image-resolution mask onto a coarser grid, thresholding
// at 0.5; the zero sentinel maps to the zero sentinel. Rejects upsampling.
Mask downsample_mask(const Mask& mask, int target_height, int target_width);

class CorpusError : public std::runtime_error {
 public:
  enum class Kind { bad_magic, bad_header, truncated, bad_checksum, bad_record, io };
  CorpusError(Kind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

void write_corpus(std::span<const SampleRecord> records, const std::filesystem::path& path);
std::vector<SampleRecord> read_corpus(const std::filesystem::path& path);

struct CorpusHeader {
  uint32_t version = 0;
  uint32_t num_classes = 0;
  uint32_t count = 0;
  uint32_t height = 0;
  uint32_t width = 0;
};
CorpusHeader read_corpus_header(const std::filesystem::path& path);

// Exact on-disk size of a corpus with `count` records of the given geometry.
long long corpus_file_size(int count, int height, int width);

}  // namespace gocnn
