#include "gocnn/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace gocnn {
namespace {

constexpr char kMagic[6] = {'G', 'O', 'C', 'N', 'N', '1'};

void put_u32le(std::ofstream& os, uint32_t v) {
  const uint8_t raw[4] = {static_cast<uint8_t>(v & 0xff), static_cast<uint8_t>((v >> 8) & 0xff),
                          static_cast<uint8_t>((v >> 16) & 0xff),
                          static_cast<uint8_t>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(raw), 4);
}

uint32_t get_u32le(std::ifstream& is) {
  uint8_t raw[4];
  is.read(reinterpret_cast<char*>(raw), 4);
  if (is.gcount() != 4) throw CheckpointError(CheckpointError::Kind::truncated, "truncated field");
  return static_cast<uint32_t>(raw[0]) | (static_cast<uint32_t>(raw[1]) << 8) |
         (static_cast<uint32_t>(raw[2]) << 16) | (static_cast<uint32_t>(raw[3]) << 24);
}

void put_f64le(std::ofstream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, 8);
  uint8_t raw[8];
  for (int i = 0; i < 8; ++i) raw[i] = static_cast<uint8_t>((bits >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(raw), 8);
}

}  // namespace

void save_tensors(const std::vector<std::pair<std::string, Tensor>>& tensors,
                  const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw CheckpointError(CheckpointError::Kind::io,
                          "cannot open '" + path.string() + "' for write");
  }
  os.write(kMagic, 6);
  for (const auto& [name, tensor] : tensors) {
    put_u32le(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32le(os, static_cast<uint32_t>(tensor.rank()));
    for (int d = 0; d < tensor.rank(); ++d) put_u32le(os, static_cast<uint32_t>(tensor.dim(d)));
    for (long long i = 0; i < tensor.size(); ++i) put_f64le(os, tensor[i]);
  }
  if (!os) throw CheckpointError(CheckpointError::Kind::io, "write failed for '" + path.string() + "'");
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path.string() + "'");
  char magic[6];
  is.read(magic, 6);
  if (is.gcount() != 6 || std::memcmp(magic, kMagic, 6) != 0) {
    throw CheckpointError(CheckpointError::Kind::bad_magic,
                          "'" + path.string() + "' is not a checkpoint file");
  }
  std::vector<std::pair<std::string, Tensor>> tensors;
  while (true) {
    is.peek();
    if (is.eof()) break;
    const uint32_t name_len = get_u32le(is);
    if (name_len == 0 || name_len > 4096) {
      throw CheckpointError(CheckpointError::Kind::bad_value, "implausible tensor name length");
    }
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (is.gcount() != static_cast<std::streamsize>(name_len)) {
      throw CheckpointError(CheckpointError::Kind::truncated, "truncated tensor name");
    }
    const uint32_t rank = get_u32le(is);
    if (rank > 8) throw CheckpointError(CheckpointError::Kind::bad_value, "implausible rank");
    std::vector<int> shape(rank);
    long long numel = 1;
    for (uint32_t d = 0; d < rank; ++d) {
      const uint32_t dim = get_u32le(is);
      if (dim == 0 || dim > (1u << 24)) {
        throw CheckpointError(CheckpointError::Kind::bad_value, "implausible dimension");
      }
      shape[d] = static_cast<int>(dim);
      numel *= dim;
    }
    std::vector<double> data(static_cast<size_t>(numel));
    std::vector<uint8_t> raw(static_cast<size_t>(numel) * 8);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (is.gcount() != static_cast<std::streamsize>(raw.size())) {
      throw CheckpointError(CheckpointError::Kind::truncated,
                            "truncated data for tensor '" + name + "'");
    }
    for (long long i = 0; i < numel; ++i) {
      uint64_t bits = 0;
      for (int b = 7; b >= 0; --b) {
        bits = (bits << 8) | raw[static_cast<size_t>(i) * 8 + static_cast<size_t>(b)];
      }
      double v;
      std::memcpy(&v, &bits, 8);
      data[static_cast<size_t>(i)] = v;
    }
    tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return tensors;
}

namespace {

std::string stages_to_string(const std::vector<ConvStage>& stages) {
  std::ostringstream os;
  for (size_t i = 0; i < stages.size(); ++i) {
    if (i) os << ',';
    const ConvStage& s = stages[i];
    os << s.out_channels << ':' << s.kernel << ':' << s.stride << ':' << s.pad << ':'
       << (s.pool_after ? 1 : 0);
  }
  return os.str();
}

std::vector<ConvStage> stages_from_string(const std::string& text) {
  std::vector<ConvStage> stages;
  std::istringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    ConvStage st;
    int pool = 0;
    if (std::sscanf(item.c_str(), "%d:%d:%d:%d:%d", &st.out_channels, &st.kernel, &st.stride,
                    &st.pad, &pool) != 5) {
      throw CheckpointError(CheckpointError::Kind::bad_value,
                            "manifest: malformed stage '" + item + "'");
    }
    st.pool_after = pool != 0;
    stages.push_back(st);
  }
  if (stages.empty()) {
    throw CheckpointError(CheckpointError::Kind::bad_value, "manifest: empty stage list");
  }
  return stages;
}

}  // namespace

void save_model(const GoCNNModel& model, const std::filesystem::path& path) {
  for (const auto& [name, tensor] : model.params) {
    if (!tensor.all_finite()) {
      throw CheckpointError(CheckpointError::Kind::bad_value,
                            "parameter '" + name + "' contains non-finite values");
    }
  }
  save_tensors(model.params, path);

  std::ofstream os(path.string() + ".manifest", std::ios::trunc);
  if (!os) throw CheckpointError(CheckpointError::Kind::io, "cannot write manifest");
  const GoCNNConfig& c = model.config;
  os << "version = 1\n";
  os << "mode = " << run_mode_name(model.mode) << "\n";
  os << "classes = " << c.num_classes << "\n";
  os << "task = " << (c.task == TaskKind::multi_label ? "multi_label" : "single_label") << "\n";
  os << "input_channels = " << c.input_channels << "\n";
  os << "image_size = " << c.image_size << "\n";
  os << "stages = " << stages_to_string(c.stages) << "\n";
  os << "fg_parts = " << c.fg_parts << "\n";
  os << "bg_parts = " << c.bg_parts << "\n";
  os << "fg_channels = " << c.fg_channels() << "\n";
  os << "bg_channels = " << c.bg_channels() << "\n";
  os << "w_main = " << c.weights.main << "\n";
  os << "w_fg = " << c.weights.fg << "\n";
  os << "w_bg = " << c.weights.bg << "\n";
  os << "w_sup = " << c.weights.sup << "\n";
  os << "seed = " << model.seed << "\n";
  if (!os) throw CheckpointError(CheckpointError::Kind::io, "manifest write failed");
}

GoCNNModel load_model(const std::filesystem::path& path) {
  std::ifstream is(path.string() + ".manifest");
  if (!is) {
    throw CheckpointError(CheckpointError::Kind::io,
                          "missing manifest '" + path.string() + ".manifest'");
  }
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const size_t a = s.find_first_not_of(" \t\r");
      const size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  auto need = [&kv](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) {
      throw CheckpointError(CheckpointError::Kind::bad_value, "manifest: missing key '" + key + "'");
    }
    return it->second;
  };

  GoCNNModel model;
  GoCNNConfig cfg;
  cfg.num_classes = std::stoi(need("classes"));
  cfg.task = need("task") == "multi_label" ? TaskKind::multi_label : TaskKind::single_label;
  cfg.input_channels = std::stoi(need("input_channels"));
  cfg.image_size = std::stoi(need("image_size"));
  cfg.stages = stages_from_string(need("stages"));
  cfg.fg_parts = std::stoi(need("fg_parts"));
  cfg.bg_parts = std::stoi(need("bg_parts"));
  cfg.weights.main = std::stod(need("w_main"));
  cfg.weights.fg = std::stod(need("w_fg"));
  cfg.weights.bg = std::stod(need("w_bg"));
  cfg.weights.sup = std::stod(need("w_sup"));
  cfg.validate();
  model.config = cfg;
  model.mode = run_mode_from_name(need("mode"));
  model.seed = std::stoull(need("seed"));
  model.partition = GroupPartition::fg_bg(cfg.final_channels(), cfg.fg_parts, cfg.bg_parts);
  model.params = load_tensors(path);

  // Cross-check the tensor set against a fresh build of the same wiring.
  GoCNNModel expect = build_gocnn(cfg, 0, model.mode);
  if (expect.params.size() != model.params.size()) {
    throw CheckpointError(CheckpointError::Kind::bad_value,
                          "checkpoint tensor count does not match manifest architecture");
  }
  for (size_t i = 0; i < expect.params.size(); ++i) {
    if (expect.params[i].first != model.params[i].first ||
        !expect.params[i].second.same_shape(model.params[i].second)) {
      throw CheckpointError(CheckpointError::Kind::bad_value,
                            "checkpoint tensor '" + model.params[i].first +
                                "' does not match manifest architecture");
    }
  }
  return model;
}

}  // namespace gocnn
