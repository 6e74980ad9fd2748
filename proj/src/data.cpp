#include "gocnn/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "gocnn/rng.hpp"

namespace gocnn {
namespace {

// Substream tags for hash_u64(seed, tag, index).
constexpr uint64_t kGeometryStream = 1;
constexpr uint64_t kAppearanceStream = 2;
constexpr uint64_t kFlagStream = 3;

bool point_in_shape(const ShapeGeometry& g, double x, double y) {
  const double dx = x - g.cx, dy = y - g.cy;
  const double r = g.radius;
  switch (g.kind) {
    case ShapeClass::disk:
      return dx * dx + dy * dy <= r * r;
    case ShapeClass::square:
      return std::fabs(dx) <= r && std::fabs(dy) <= r;
    case ShapeClass::triangle: {
      // Apex up: (0,-r), (-r,r), (r,r) in centered coordinates.
      if (dy > r) return false;
      // Left edge from (0,-r) to (-r,r); right edge mirrored.
      return std::fabs(dx) * 2.0 <= dy + r;
    }
    case ShapeClass::cross:
      return (std::fabs(dx) <= r / 3.0 && std::fabs(dy) <= r) ||
             (std::fabs(dy) <= r / 3.0 && std::fabs(dx) <= r);
    case ShapeClass::ring: {
      const double d2 = dx * dx + dy * dy;
      return d2 <= r * r && d2 >= (0.5 * r) * (0.5 * r);
    }
    case ShapeClass::bar:
      return std::fabs(dx) <= r && std::fabs(dy) <= r / 3.0;
    case ShapeClass::ell:
      // Vertical stroke on the left, horizontal stroke along the bottom.
      return (dx >= -r && dx <= -r / 3.0 && std::fabs(dy) <= r) ||
             (std::fabs(dx) <= r && dy >= r / 3.0 && dy <= r);
    case ShapeClass::diamond:
      return std::fabs(dx) + std::fabs(dy) <= r;
  }
  return false;
}

struct Rgb {
  double r, g, b;
};

Rgb hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double i = std::floor(h * 6.0);
  const double f = h * 6.0 - i;
  const double p = v * (1.0 - s);
  const double q = v * (1.0 - f * s);
  const double t = v * (1.0 - (1.0 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

uint8_t quantize(double v) {
  if (v <= 0.0) return 0;
  if (v >= 1.0) return 255;
  return static_cast<uint8_t>(std::lround(255.0 * v));
}

void render_background(std::vector<uint8_t>& img, const CorpusSpec& spec, int label, Rng& rng) {
  const int n = spec.image_size;
  const long long plane = static_cast<long long>(n) * n;
  switch (spec.background) {
    case BackgroundMode::blank:
      std::fill(img.begin(), img.end(), static_cast<uint8_t>(0));
      return;
    case BackgroundMode::noise:
      for (auto& b : img) b = static_cast<uint8_t>(rng.uniform_int(256));
      return;
    case BackgroundMode::informative:
      break;
  }
  // Texture family follows the class except with probability texture_mix,
  // where it is drawn uniformly; the background is a useful but imperfect
  // label signal.
  int family = label;
  if (rng.uniform() < spec.texture_mix) family = rng.uniform_int(spec.num_classes);
  const Rgb tint = hsv_to_rgb(static_cast<double>(family) / static_cast<double>(spec.num_classes),
                              0.65, 0.50);
  const double theta = 3.141592653589793 * static_cast<double>(family) /
                       static_cast<double>(spec.num_classes);
  const double freq = 3.0 + static_cast<double>(family % 3);
  const double phase = rng.uniform(0.0, 2.0 * 3.141592653589793);
  const double ct = std::cos(theta), st = std::sin(theta);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double proj = (ct * (x + 0.5) + st * (y + 0.5)) / static_cast<double>(n);
      const double wave = 0.72 + 0.28 * std::sin(2.0 * 3.141592653589793 * freq * proj + phase);
      const double jitter = rng.uniform(-0.03, 0.03);
      const long long at = static_cast<long long>(y) * n + x;
      img[static_cast<size_t>(at)] = quantize(tint.r * wave + jitter);
      img[static_cast<size_t>(plane + at)] = quantize(tint.g * wave + jitter);
      img[static_cast<size_t>(2 * plane + at)] = quantize(tint.b * wave + jitter);
    }
  }
}

}  // namespace

const char* background_mode_name(BackgroundMode mode) {
  switch (mode) {
    case BackgroundMode::informative: return "informative";
    case BackgroundMode::noise: return "noise";
    case BackgroundMode::blank: return "blank";
  }
  return "?";
}

BackgroundMode background_mode_from_name(const std::string& name) {
  if (name == "informative") return BackgroundMode::informative;
  if (name == "noise") return BackgroundMode::noise;
  if (name == "blank") return BackgroundMode::blank;
  throw std::invalid_argument("unknown background mode '" + name + "'");
}

ShapeGeometry sample_geometry(const CorpusSpec& spec, int index) {
  Rng rng(hash_u64(spec.seed, kGeometryStream, static_cast<uint64_t>(index)));
  const int n = spec.image_size;
  ShapeGeometry g;
  g.kind = static_cast<ShapeClass>(index / spec.per_class);
  g.radius = rng.uniform(0.16, 0.30) * static_cast<double>(n);
  const double margin = g.radius + 1.0;
  g.cx = rng.uniform(margin, static_cast<double>(n) - margin);
  g.cy = rng.uniform(margin, static_cast<double>(n) - margin);
  return g;
}

Tensor rasterize_shape(const ShapeGeometry& geometry, int height, int width) {
  Tensor mask({height, width});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (point_in_shape(geometry, x + 0.5, y + 0.5)) {
        mask[static_cast<long long>(y) * width + x] = 1.0;
      }
    }
  }
  return mask;
}

std::vector<SampleRecord> generate(const CorpusSpec& spec) {
  if (spec.num_classes < 1 || spec.num_classes > kShapeClassCount) {
    throw std::invalid_argument("corpus needs 1.." + std::to_string(kShapeClassCount) +
                                " classes, got " + std::to_string(spec.num_classes));
  }
  if (spec.per_class < 1) throw std::invalid_argument("per_class must be >= 1");
  if (spec.image_size < 8) throw std::invalid_argument("image_size must be >= 8");
  if (spec.privileged_fraction < 0.0 || spec.privileged_fraction > 1.0) {
    throw std::invalid_argument("privileged_fraction must be in [0,1]");
  }

  const int n = spec.image_size;
  const long long plane = static_cast<long long>(n) * n;
  const int total = spec.num_classes * spec.per_class;
  std::vector<SampleRecord> records(static_cast<size_t>(total));

  for (int index = 0; index < total; ++index) {
    const int label = index / spec.per_class;
    const ShapeGeometry geom = sample_geometry(spec, index);
    Tensor mask = rasterize_shape(geom, n, n);

    Rng rng(hash_u64(spec.seed, kAppearanceStream, static_cast<uint64_t>(index)));
    std::vector<uint8_t> img(static_cast<size_t>(3 * plane));
    render_background(img, spec, label, rng);
    const int base_r = 100 + rng.uniform_int(156);
    const int base_g = 100 + rng.uniform_int(156);
    const int base_b = 100 + rng.uniform_int(156);
    for (long long at = 0; at < plane; ++at) {
      if (mask[at] == 0.0) continue;
      const int jitter = rng.uniform_int(25) - 12;
      img[static_cast<size_t>(at)] =
          static_cast<uint8_t>(std::clamp(base_r + jitter, 0, 255));
      img[static_cast<size_t>(plane + at)] =
          static_cast<uint8_t>(std::clamp(base_g + jitter, 0, 255));
      img[static_cast<size_t>(2 * plane + at)] =
          static_cast<uint8_t>(std::clamp(base_b + jitter, 0, 255));
    }

    SampleRecord& rec = records[static_cast<size_t>(index)];
    rec.label = label;
    rec.image = Tensor({3, n, n});
    for (long long i = 0; i < 3 * plane; ++i) {
      rec.image[i] = static_cast<double>(img[static_cast<size_t>(i)]) / 255.0;
    }
    rec.mask_fg = make_mask(std::move(mask), MaskResolution::image, MaskPolarity::foreground);
    rec.has_privileged = true;  // flags assigned below
  }

  // Stratified privileged flags: exactly round(p*per_class) per class. The
  // flag draw is independent of the image streams, so changing the fraction
  // keeps the images bit-identical; for a fixed seed the privileged subsets
  // are nested across increasing fractions.
  const int n_priv =
      static_cast<int>(std::llround(spec.privileged_fraction * static_cast<double>(spec.per_class)));
  for (int k = 0; k < spec.num_classes; ++k) {
    std::vector<int> order(static_cast<size_t>(spec.per_class));
    for (int s = 0; s < spec.per_class; ++s) order[static_cast<size_t>(s)] = s;
    Rng rng(hash_u64(spec.seed, kFlagStream, static_cast<uint64_t>(k)));
    rng.shuffle(order);
    for (int s = 0; s < spec.per_class; ++s) {
      SampleRecord& rec = records[static_cast<size_t>(k * spec.per_class + order[static_cast<size_t>(s)])];
      if (s < n_priv) continue;
      rec.has_privileged = false;
      rec.mask_fg = Mask{Tensor({n, n}), MaskResolution::image, MaskPolarity::foreground};
    }
  }
  return records;
}

Mask downsample_mask(const Mask& mask, int target_height, int target_width) {
  const int h = mask.height(), w = mask.width();
  if (target_height < 1 || target_width < 1) {
    throw std::invalid_argument("downsample_mask: target must be positive");
  }
  if (target_height > h || target_width > w) {
    throw std::invalid_argument("downsample_mask: cannot upsample " + std::to_string(h) + "x" +
                                std::to_string(w) + " mask to " + std::to_string(target_height) +
                                "x" + std::to_string(target_width));
  }
  Tensor out({target_height, target_width});
  for (int i = 0; i < target_height; ++i) {
    const int r0 = static_cast<int>(static_cast<long long>(i) * h / target_height);
    const int r1 = static_cast<int>(static_cast<long long>(i + 1) * h / target_height);
    for (int j = 0; j < target_width; ++j) {
      const int c0 = static_cast<int>(static_cast<long long>(j) * w / target_width);
      const int c1 = static_cast<int>(static_cast<long long>(j + 1) * w / target_width);
      double s = 0.0;
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) s += mask.data[static_cast<long long>(r) * w + c];
      }
      const double avg = s / (static_cast<double>(r1 - r0) * static_cast<double>(c1 - c0));
      out[static_cast<long long>(i) * target_width + j] = avg >= 0.5 ? 1.0 : 0.0;
    }
  }
  return Mask{std::move(out), MaskResolution::feature, mask.polarity};
}

namespace {

constexpr char kMagic[6] = {'G', 'O', 'S', 'Y', 'N', '1'};
constexpr uint32_t kVersion = 1;

void put_u32le(std::vector<uint8_t>& buf, uint32_t v) {
  buf.push_back(static_cast<uint8_t>(v & 0xff));
  buf.push_back(static_cast<uint8_t>((v >> 8) & 0xff));
  buf.push_back(static_cast<uint8_t>((v >> 16) & 0xff));
  buf.push_back(static_cast<uint8_t>((v >> 24) & 0xff));
}

uint32_t get_u32le(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

long long corpus_file_size(int count, int height, int width) {
  const long long record = 9 + 4LL * height * width;
  return 26 + static_cast<long long>(count) * record;
}

void write_corpus(std::span<const SampleRecord> records, const std::filesystem::path& path) {
  if (records.empty()) throw CorpusError(CorpusError::Kind::io, "write_corpus: no records");
  const Tensor& img0 = records[0].image;
  if (img0.rank() != 3 || img0.dim(0) != 3) {
    throw CorpusError(CorpusError::Kind::io, "write_corpus: images must be [3,H,W]");
  }
  const int h = img0.dim(1), w = img0.dim(2);
  int max_label = 0;
  for (const auto& r : records) {
    if (r.label < 0) throw CorpusError(CorpusError::Kind::io, "write_corpus: negative label");
    max_label = std::max(max_label, r.label);
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw CorpusError(CorpusError::Kind::io, "cannot open '" + path.string() + "' for write");

  std::vector<uint8_t> header;
  header.insert(header.end(), kMagic, kMagic + 6);
  put_u32le(header, kVersion);
  put_u32le(header, static_cast<uint32_t>(max_label + 1));
  put_u32le(header, static_cast<uint32_t>(records.size()));
  put_u32le(header, static_cast<uint32_t>(h));
  put_u32le(header, static_cast<uint32_t>(w));
  os.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));

  const long long plane = static_cast<long long>(h) * w;
  std::vector<uint8_t> payload;
  for (const auto& r : records) {
    if (r.image.dim(1) != h || r.image.dim(2) != w) {
      throw CorpusError(CorpusError::Kind::io, "write_corpus: inconsistent image sizes");
    }
    payload.clear();
    put_u32le(payload, static_cast<uint32_t>(r.label));
    payload.push_back(r.has_privileged ? 1 : 0);
    for (long long i = 0; i < 3 * plane; ++i) {
      payload.push_back(quantize(r.image[i]));
    }
    for (long long i = 0; i < plane; ++i) {
      payload.push_back(r.mask_fg.data[i] != 0.0 ? 1 : 0);
    }
    const uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
    put_u32le(payload, crc);
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
  }
  if (!os) throw CorpusError(CorpusError::Kind::io, "write failed for '" + path.string() + "'");
}

CorpusHeader read_corpus_header(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorpusError(CorpusError::Kind::io, "cannot open '" + path.string() + "'");
  uint8_t raw[26];
  is.read(reinterpret_cast<char*>(raw), 26);
  if (is.gcount() != 26) {
    throw CorpusError(CorpusError::Kind::truncated, "corpus header truncated");
  }
  if (std::memcmp(raw, kMagic, 6) != 0) {
    throw CorpusError(CorpusError::Kind::bad_magic, "not a corpus file (bad magic)");
  }
  CorpusHeader hd;
  hd.version = get_u32le(raw + 6);
  hd.num_classes = get_u32le(raw + 10);
  hd.count = get_u32le(raw + 14);
  hd.height = get_u32le(raw + 18);
  hd.width = get_u32le(raw + 22);
  if (hd.version != kVersion) {
    throw CorpusError(CorpusError::Kind::bad_header,
                      "unsupported corpus version " + std::to_string(hd.version));
  }
  if (hd.num_classes < 1 || hd.height < 1 || hd.width < 1 || hd.height > 8192 || hd.width > 8192) {
    throw CorpusError(CorpusError::Kind::bad_header, "implausible corpus header fields");
  }
  return hd;
}

std::vector<SampleRecord> read_corpus(const std::filesystem::path& path) {
  const CorpusHeader hd = read_corpus_header(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorpusError(CorpusError::Kind::io, "cannot open '" + path.string() + "'");
  is.seekg(26);

  const int h = static_cast<int>(hd.height), w = static_cast<int>(hd.width);
  const long long plane = static_cast<long long>(h) * w;
  const long long payload_size = 5 + 4 * plane;
  std::vector<uint8_t> payload(static_cast<size_t>(payload_size));
  std::vector<SampleRecord> records;
  records.reserve(hd.count);

  for (uint32_t n = 0; n < hd.count; ++n) {
    is.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload_size));
    if (is.gcount() != payload_size) {
      throw CorpusError(CorpusError::Kind::truncated,
                        "record " + std::to_string(n) + " truncated");
    }
    uint8_t crc_raw[4];
    is.read(reinterpret_cast<char*>(crc_raw), 4);
    if (is.gcount() != 4) {
      throw CorpusError(CorpusError::Kind::truncated,
                        "record " + std::to_string(n) + " checksum truncated");
    }
    const uint32_t stored = get_u32le(crc_raw);
    const uint32_t actual = static_cast<uint32_t>(
        ::crc32(0L, payload.data(), static_cast<uInt>(payload.size())));
    if (stored != actual) {
      throw CorpusError(CorpusError::Kind::bad_checksum,
                        "record " + std::to_string(n) + " checksum mismatch");
    }

    SampleRecord rec;
    const uint32_t label = get_u32le(payload.data());
    if (label >= hd.num_classes) {
      throw CorpusError(CorpusError::Kind::bad_record,
                        "record " + std::to_string(n) + " label out of range");
    }
    rec.label = static_cast<int>(label);
    if (payload[4] > 1) {
      throw CorpusError(CorpusError::Kind::bad_record,
                        "record " + std::to_string(n) + " has invalid privileged flag");
    }
    rec.has_privileged = payload[4] == 1;
    rec.image = Tensor({3, h, w});
    for (long long i = 0; i < 3 * plane; ++i) {
      rec.image[i] = static_cast<double>(payload[static_cast<size_t>(5 + i)]) / 255.0;
    }
    Tensor mask({h, w});
    bool any = false;
    for (long long i = 0; i < plane; ++i) {
      const uint8_t b = payload[static_cast<size_t>(5 + 3 * plane + i)];
      if (b > 1) {
        throw CorpusError(CorpusError::Kind::bad_record,
                          "record " + std::to_string(n) + " has non-binary mask byte");
      }
      mask[i] = static_cast<double>(b);
      any = any || b == 1;
    }
    if (rec.has_privileged != any) {
      throw CorpusError(CorpusError::Kind::bad_record,
                        "record " + std::to_string(n) +
                            " privileged flag disagrees with mask sentinel");
    }
    rec.mask_fg = make_mask(std::move(mask), MaskResolution::image, MaskPolarity::foreground);
    records.push_back(std::move(rec));
  }
  if (is.peek() != std::ifstream::traits_type::eof()) {
    throw CorpusError(CorpusError::Kind::bad_record, "trailing bytes after last record");
  }
  return records;
}

}  // namespace gocnn
