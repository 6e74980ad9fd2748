#include "gocnn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "gocnn/rng.hpp"

namespace gocnn {

const char* run_mode_name(RunMode mode) {
  switch (mode) {
    case RunMode::full: return "gocnn";
    case RunMode::only_fg: return "only_fg";
    case RunMode::only_bg: return "only_bg";
    case RunMode::vanilla: return "vanilla";
  }
  return "?";
}

RunMode run_mode_from_name(const std::string& name) {
  if (name == "gocnn" || name == "full") return RunMode::full;
  if (name == "only_fg") return RunMode::only_fg;
  if (name == "only_bg") return RunMode::only_bg;
  if (name == "vanilla") return RunMode::vanilla;
  throw std::invalid_argument("unknown run mode '" + name + "'");
}

GoCNNConfig GoCNNConfig::tiny_net(int num_classes, int image_size) {
  GoCNNConfig cfg;
  cfg.stages = {{16, 3, 1, 1, true}, {32, 3, 1, 1, true}, {64, 3, 1, 1, false}};
  cfg.image_size = image_size;
  cfg.num_classes = num_classes;
  return cfg;
}

void GoCNNConfig::validate() const {
  if (stages.empty()) throw std::invalid_argument("config: no conv stages");
  if (num_classes < 2) throw std::invalid_argument("config: num_classes must be >= 2");
  if (input_channels < 1 || image_size < 1) {
    throw std::invalid_argument("config: bad input geometry");
  }
  if (fg_parts < 1 || bg_parts < 1) throw std::invalid_argument("config: bad group ratio");
  const int c = final_channels();
  if (c % (fg_parts + bg_parts) != 0) {
    throw std::invalid_argument("config: final channel count " + std::to_string(c) +
                                " is not divisible by group ratio " + std::to_string(fg_parts) +
                                ":" + std::to_string(bg_parts));
  }
  if (stages.back().pool_after) {
    throw std::invalid_argument("config: final stage must not pool (heads consume its maps)");
  }
  stage_shape(static_cast<int>(stages.size()));  // walks all stages, throws on bad geometry
}

int GoCNNConfig::final_channels() const { return stages.back().out_channels; }

int GoCNNConfig::fg_channels() const {
  return final_channels() / (fg_parts + bg_parts) * fg_parts;
}

int GoCNNConfig::bg_channels() const { return final_channels() - fg_channels(); }

LayerShape GoCNNConfig::stage_shape(int stage_index) const {
  if (stage_index < 1 || stage_index > static_cast<int>(stages.size())) {
    throw std::invalid_argument("stage index " + std::to_string(stage_index) + " outside [1," +
                                std::to_string(stages.size()) + "]");
  }
  int h = image_size, w = image_size;
  LayerShape out;
  for (int i = 0; i < stage_index; ++i) {
    const ConvStage& st = stages[static_cast<size_t>(i)];
    if (st.out_channels < 1 || st.kernel < 1 || st.stride < 1 || st.pad < 0) {
      throw std::invalid_argument("config: malformed stage " + std::to_string(i + 1));
    }
    if (st.kernel > h + 2 * st.pad || st.kernel > w + 2 * st.pad) {
      throw std::invalid_argument("config: stage " + std::to_string(i + 1) +
                                  " kernel exceeds its input");
    }
    h = (h + 2 * st.pad - st.kernel) / st.stride + 1;
    w = (w + 2 * st.pad - st.kernel) / st.stride + 1;
    out = LayerShape{st.out_channels, h, w, i + 1};
    if (i + 1 == stage_index) break;  // probe view is the activated pre-pool map
    if (st.pool_after) {
      if (h % 2 != 0 || w % 2 != 0) {
        throw std::invalid_argument("config: stage " + std::to_string(i + 1) +
                                    " pools odd spatial dims");
      }
      h /= 2;
      w /= 2;
    }
  }
  return out;
}

bool GoCNNModel::has_group_heads() const { return has_param("fc_fg.weight"); }

bool GoCNNModel::has_param(const std::string& name) const {
  for (const auto& p : params) {
    if (p.first == name) return true;
  }
  return false;
}

Tensor& GoCNNModel::param(const std::string& name) {
  for (auto& p : params) {
    if (p.first == name) return p.second;
  }
  throw std::invalid_argument("model has no parameter '" + name + "'");
}

const Tensor& GoCNNModel::param(const std::string& name) const {
  return const_cast<GoCNNModel*>(this)->param(name);
}

long long GoCNNModel::parameter_count() const {
  long long n = 0;
  for (const auto& p : params) n += p.second.size();
  return n;
}

long long GoCNNModel::test_parameter_count() const {
  long long n = 0;
  for (const auto& p : params) {
    if (p.first.rfind("fc_fg.", 0) == 0 || p.first.rfind("fc_bg.", 0) == 0) continue;
    n += p.second.size();
  }
  return n;
}

namespace {

Tensor he_normal(Rng& rng, std::vector<int> shape, int fan_in) {
  Tensor t(std::move(shape));
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (long long i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, std);
  return t;
}

}  // namespace

GoCNNModel build_gocnn(const GoCNNConfig& config, uint64_t seed, RunMode mode) {
  config.validate();
  GoCNNModel m;
  m.config = config;
  m.mode = mode;
  m.seed = seed;
  m.partition = GroupPartition::fg_bg(config.final_channels(), config.fg_parts, config.bg_parts);

  Rng rng(hash_u64(seed, 0x676f636eULL));
  int cin = config.input_channels;
  for (size_t i = 0; i < config.stages.size(); ++i) {
    const ConvStage& st = config.stages[i];
    const std::string base = "conv" + std::to_string(i + 1);
    const int fan_in = cin * st.kernel * st.kernel;
    m.params.emplace_back(base + ".weight",
                          he_normal(rng, {st.out_channels, cin, st.kernel, st.kernel}, fan_in));
    m.params.emplace_back(base + ".bias", Tensor({st.out_channels}));
    cin = st.out_channels;
  }
  const int c = config.final_channels();
  const int k = config.num_classes;
  m.params.emplace_back("fc_main.weight", he_normal(rng, {k, c}, c));
  m.params.emplace_back("fc_main.bias", Tensor({k}));
  if (mode != RunMode::vanilla) {
    const int fgc = config.fg_channels(), bgc = config.bg_channels();
    m.params.emplace_back("fc_fg.weight", he_normal(rng, {k, fgc}, fgc));
    m.params.emplace_back("fc_fg.bias", Tensor({k}));
    m.params.emplace_back("fc_bg.weight", he_normal(rng, {k, bgc}, bgc));
    m.params.emplace_back("fc_bg.bias", Tensor({k}));
  }
  return m;
}

void set_run_mode(GoCNNModel& model, RunMode mode) {
  if (mode == RunMode::full && !model.has_group_heads()) {
    throw std::invalid_argument("cannot switch a vanilla build to full wiring: group heads absent");
  }
  model.mode = mode;
}

Batch make_batch(std::span<const SampleRecord> records, const GoCNNConfig& config) {
  if (records.empty()) throw std::invalid_argument("make_batch: empty record span");
  const int b = static_cast<int>(records.size());
  const int n = config.image_size;
  const LayerShape fs = config.final_shape();

  Batch batch;
  batch.images = Tensor({b, config.input_channels, n, n});
  batch.labels.resize(static_cast<size_t>(b));
  batch.mask_f = Tensor({b, fs.height, fs.width});
  batch.mask_b = Tensor({b, fs.height, fs.width});
  if (config.task == TaskKind::multi_label) batch.targets = Tensor({b, config.num_classes});

  const long long img_size = static_cast<long long>(config.input_channels) * n * n;
  const long long plane = static_cast<long long>(fs.height) * fs.width;
  for (int i = 0; i < b; ++i) {
    const SampleRecord& rec = records[static_cast<size_t>(i)];
    if (rec.image.rank() != 3 || rec.image.dim(0) != config.input_channels ||
        rec.image.dim(1) != n || rec.image.dim(2) != n) {
      throw std::invalid_argument("make_batch: sample " + std::to_string(i) + " image " +
                                  shape_to_string(rec.image.shape()) +
                                  " does not match configured input geometry");
    }
    if (rec.label < 0 || rec.label >= config.num_classes) {
      throw std::invalid_argument("make_batch: sample " + std::to_string(i) + " label " +
                                  std::to_string(rec.label) + " outside configured [0," +
                                  std::to_string(config.num_classes) + ")");
    }
    std::copy(rec.image.data(), rec.image.data() + img_size, batch.images.data() + img_size * i);
    batch.labels[static_cast<size_t>(i)] = rec.label;
    if (config.task == TaskKind::multi_label) {
      batch.targets[static_cast<long long>(i) * config.num_classes + rec.label] = 1.0;
    }
    if (rec.has_privileged) {
      const Mask mf = downsample_mask(rec.mask_fg, fs.height, fs.width);
      const Mask mb = mf.complement();  // sentinel-aware
      std::copy(mf.data.data(), mf.data.data() + plane, batch.mask_f.data() + plane * i);
      std::copy(mb.data.data(), mb.data.data() + plane, batch.mask_b.data() + plane * i);
    }
    // non-privileged rows stay all-zero: the sentinel pair
  }
  return batch;
}

namespace {

struct GraphParams {
  std::vector<std::pair<std::string, Var>> vars;
  Var get(const std::string& name) const {
    for (const auto& p : vars) {
      if (p.first == name) return p.second;
    }
    throw std::invalid_argument("graph has no parameter '" + name + "'");
  }
};

// Shared conv trunk. Returns the activated output of `upto_stage` (pre-pool);
// pass the last stage for the full trunk.
Var build_trunk(Tape& tape, const GoCNNModel& model, Var x, int upto_stage, bool with_grad,
                GraphParams* out_params) {
  const auto& stages = model.config.stages;
  Var cur = x;
  for (int i = 0; i < upto_stage; ++i) {
    const ConvStage& st = stages[static_cast<size_t>(i)];
    const std::string base = "conv" + std::to_string(i + 1);
    Var w = tape.leaf(model.param(base + ".weight"), with_grad);
    Var b = tape.leaf(model.param(base + ".bias"), with_grad);
    if (out_params != nullptr) {
      out_params->vars.emplace_back(base + ".weight", w);
      out_params->vars.emplace_back(base + ".bias", b);
    }
    cur = tape.relu(tape.conv2d(cur, w, b, st.stride, st.pad));
    if (st.pool_after && i + 1 < upto_stage) cur = tape.avg_pool2x2(cur);
  }
  return cur;
}

Var classification_loss(Tape& tape, Var logits, const Batch& batch, const GoCNNConfig& config) {
  if (config.task == TaskKind::multi_label) {
    return multilabel_logistic_loss(tape, logits, batch.targets);
  }
  return softmax_cross_entropy(tape, logits, batch.labels);
}

Var add_head(Tape& tape, const GoCNNModel& model, GraphParams& gp, bool with_grad,
             const std::string& base, Var features) {
  Var w = tape.leaf(model.param(base + ".weight"), with_grad);
  Var b = tape.leaf(model.param(base + ".bias"), with_grad);
  gp.vars.emplace_back(base + ".weight", w);
  gp.vars.emplace_back(base + ".bias", b);
  return tape.fully_connected(features, w, b);
}

}  // namespace

LossBundle TrainGraph::losses() const {
  LossBundle lb;
  auto val = [this](Var v) { return v.valid() ? tape.value(v).item() : 0.0; };
  lb.main = val(main_loss);
  lb.fg_cls = val(fg_loss);
  lb.bg_cls = val(bg_loss);
  lb.sup_fg = val(sup_fg);
  lb.sup_bg = val(sup_bg);
  lb.total = val(total);
  return lb;
}

std::vector<std::pair<std::string, Tensor>> TrainGraph::parameter_grads() const {
  std::vector<std::pair<std::string, Tensor>> grads;
  grads.reserve(param_vars.size());
  for (const auto& [name, var] : param_vars) {
    grads.emplace_back(name, tape.grad_or_zero(var));
  }
  return grads;
}

TrainGraph forward_train(const GoCNNModel& model, const Batch& batch,
                         const ForwardOptions& options) {
  const GoCNNConfig& cfg = model.config;
  const int b = batch.size();
  if (b == 0) throw std::invalid_argument("forward_train: empty batch");
  if (static_cast<int>(batch.labels.size()) != b) {
    throw std::invalid_argument("forward_train: batch has " + std::to_string(batch.labels.size()) +
                                " labels for " + std::to_string(b) + " images");
  }
  const LayerShape fs = cfg.final_shape();
  for (const Tensor* m : {&batch.mask_f, &batch.mask_b}) {
    if (m->rank() != 3 || m->dim(0) != b || m->dim(1) != fs.height || m->dim(2) != fs.width) {
      throw std::invalid_argument("forward_train: masks " + shape_to_string(m->shape()) +
                                  " do not match feature resolution [" + std::to_string(b) + "," +
                                  std::to_string(fs.height) + "," + std::to_string(fs.width) + "]");
    }
  }

  TrainGraph g;
  GraphParams gp;
  Var x = g.tape.leaf(batch.images, false);
  Var feats = build_trunk(g.tape, model, x, static_cast<int>(cfg.stages.size()),
                          options.with_grad, &gp);
  g.final_features = feats;

  const int c = cfg.final_channels();
  const int fgc = cfg.fg_channels();
  const LossWeights& w = cfg.weights;

  switch (model.mode) {
    case RunMode::full: {
      Var f_fg = g.tape.slice_channels(feats, 0, fgc);
      Var f_bg = g.tape.slice_channels(feats, fgc, c);
      Var p_fg = g.tape.global_avg_pool(f_fg);
      Var p_bg = g.tape.global_avg_pool(f_bg);
      g.main_logits = add_head(g.tape, model, gp, options.with_grad, "fc_main",
                               g.tape.concat_cols(p_fg, p_bg));
      g.fg_logits = add_head(g.tape, model, gp, options.with_grad, "fc_fg", p_fg);
      g.bg_logits = add_head(g.tape, model, gp, options.with_grad, "fc_bg", p_bg);
      g.main_loss = classification_loss(g.tape, g.main_logits, batch, cfg);
      g.fg_loss = classification_loss(g.tape, g.fg_logits, batch, cfg);
      g.bg_loss = classification_loss(g.tape, g.bg_logits, batch, cfg);
      Var total = g.tape.add(g.tape.scale(g.main_loss, w.main),
                             g.tape.add(g.tape.scale(g.fg_loss, w.fg),
                                        g.tape.scale(g.bg_loss, w.bg)));
      if (options.suppressors) {
        g.sup_fg = suppression_loss(g.tape, f_fg, batch.mask_b);
        g.sup_bg = suppression_loss(g.tape, f_bg, batch.mask_f);
        total = g.tape.add(total, g.tape.scale(g.tape.add(g.sup_fg, g.sup_bg), w.sup));
      }
      g.total = total;
      break;
    }
    case RunMode::only_fg: {
      Var f_fg = g.tape.slice_channels(feats, 0, fgc);
      Var p_fg = g.tape.global_avg_pool(f_fg);
      Var wm = g.tape.leaf(model.param("fc_main.weight"), options.with_grad);
      Var bm = g.tape.leaf(model.param("fc_main.bias"), options.with_grad);
      gp.vars.emplace_back("fc_main.weight", wm);
      gp.vars.emplace_back("fc_main.bias", bm);
      g.main_logits = g.tape.fully_connected(p_fg, g.tape.slice_cols(wm, 0, fgc), bm);
      g.fg_logits = g.main_logits;  // shared head
      g.main_loss = classification_loss(g.tape, g.main_logits, batch, cfg);
      g.fg_loss = g.main_loss;
      Var total = g.tape.scale(g.main_loss, w.main);
      if (options.suppressors) {
        g.sup_fg = suppression_loss(g.tape, f_fg, batch.mask_b);
        total = g.tape.add(total, g.tape.scale(g.sup_fg, w.sup));
      }
      g.total = total;
      break;
    }
    case RunMode::only_bg: {
      Var f_bg = g.tape.slice_channels(feats, fgc, c);
      Var p_bg = g.tape.global_avg_pool(f_bg);
      Var wm = g.tape.leaf(model.param("fc_main.weight"), options.with_grad);
      Var bm = g.tape.leaf(model.param("fc_main.bias"), options.with_grad);
      gp.vars.emplace_back("fc_main.weight", wm);
      gp.vars.emplace_back("fc_main.bias", bm);
      g.main_logits = g.tape.fully_connected(p_bg, g.tape.slice_cols(wm, fgc, c), bm);
      g.bg_logits = g.main_logits;  // shared head
      g.main_loss = classification_loss(g.tape, g.main_logits, batch, cfg);
      g.bg_loss = g.main_loss;
      Var total = g.tape.scale(g.main_loss, w.main);
      if (options.suppressors) {
        g.sup_bg = suppression_loss(g.tape, f_bg, batch.mask_f);
        total = g.tape.add(total, g.tape.scale(g.sup_bg, w.sup));
      }
      g.total = total;
      break;
    }
    case RunMode::vanilla: {
      Var pooled = g.tape.global_avg_pool(feats);
      g.main_logits = add_head(g.tape, model, gp, options.with_grad, "fc_main", pooled);
      g.main_loss = classification_loss(g.tape, g.main_logits, batch, cfg);
      g.total = g.main_loss;
      break;
    }
  }
  g.param_vars = std::move(gp.vars);
  return g;
}

Tensor forward_test(const GoCNNModel& model, const Tensor& images) {
  const GoCNNConfig& cfg = model.config;
  Tape tape;
  Var x = tape.leaf(images, false);
  Var feats = build_trunk(tape, model, x, static_cast<int>(cfg.stages.size()), false, nullptr);
  Var pooled = tape.global_avg_pool(feats);
  Var wm = tape.leaf(model.param("fc_main.weight"), false);
  Var bm = tape.leaf(model.param("fc_main.bias"), false);
  Var logits;
  switch (model.mode) {
    case RunMode::full:
    case RunMode::vanilla:
      logits = tape.fully_connected(pooled, wm, bm);
      break;
    case RunMode::only_fg:
      logits = tape.fully_connected(tape.slice_cols(pooled, 0, cfg.fg_channels()),
                                    tape.slice_cols(wm, 0, cfg.fg_channels()), bm);
      break;
    case RunMode::only_bg:
      logits = tape.fully_connected(
          tape.slice_cols(pooled, cfg.fg_channels(), cfg.final_channels()),
          tape.slice_cols(wm, cfg.fg_channels(), cfg.final_channels()), bm);
      break;
  }
  return tape.value(logits);
}

Tensor forward_features(const GoCNNModel& model, const Tensor& images, int stage_index) {
  if (stage_index < 1 || stage_index > static_cast<int>(model.config.stages.size())) {
    throw std::invalid_argument("forward_features: stage " + std::to_string(stage_index) +
                                " outside [1," + std::to_string(model.config.stages.size()) + "]");
  }
  Tape tape;
  Var x = tape.leaf(images, false);
  Var feats = build_trunk(tape, model, x, stage_index, false, nullptr);
  return tape.value(feats);
}

}  // namespace gocnn
