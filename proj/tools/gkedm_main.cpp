// Command-line front end: dataset generation, two-stage training, attention
// distillation and its baselines, evaluation, alpha sweeps, report emission.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <json.hpp>

#include "gkedm/distill.hpp"
#include "gkedm/graph.hpp"
#include "gkedm/layers.hpp"
#include "gkedm/pipeline.hpp"
#include "gkedm/report.hpp"

namespace {

using gkedm::ConfigError;
using json = nlohmann::ordered_json;

struct GeneratorSettings {
  bool present = false;
  bool multilabel = false;
  gkedm::MultilabelSbmParams params;
};

// values that can come from a --config file; flags override them
struct Settings {
  gkedm::TrainConfig train;
  gkedm::DistillConfig distill;
  std::string arch = "gcn:64,64";
  std::string student_arch = "gcn:16,16";
  std::string data_path;
  GeneratorSettings generator;
  std::size_t enhance_m = 8;
  std::size_t enhance_heads = 4;
};

void expect_keys(const json& j, const std::string& prefix,
                 const std::vector<std::string>& allowed) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(prefix + key + ": unknown key");
    }
  }
}

double need_number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ConfigError(path + ": expected a number");
  return j.get<double>();
}

std::int64_t need_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
  return j.get<std::int64_t>();
}

std::string need_string(const json& j, const std::string& path) {
  if (!j.is_string()) throw ConfigError(path + ": expected a string");
  return j.get<std::string>();
}

bool need_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) throw ConfigError(path + ": expected a boolean");
  return j.get<bool>();
}

void load_train_section(const json& t, gkedm::TrainConfig& cfg) {
  expect_keys(t, "train.",
              {"epochs", "lr", "backbone_lr_scale", "optimizer", "weight_decay", "seed",
               "patience", "reuse_head"});
  if (t.contains("epochs")) cfg.epochs = static_cast<int>(need_int(t["epochs"], "train.epochs"));
  if (t.contains("lr")) cfg.learning_rate = need_number(t["lr"], "train.lr");
  if (t.contains("backbone_lr_scale")) {
    cfg.backbone_lr_scale = need_number(t["backbone_lr_scale"], "train.backbone_lr_scale");
  }
  if (t.contains("weight_decay")) {
    cfg.weight_decay = need_number(t["weight_decay"], "train.weight_decay");
  }
  if (t.contains("seed")) {
    cfg.seed = static_cast<std::uint64_t>(need_int(t["seed"], "train.seed"));
  }
  if (t.contains("patience")) {
    cfg.early_stop_patience = static_cast<int>(need_int(t["patience"], "train.patience"));
  }
  if (t.contains("reuse_head")) cfg.reuse_head = need_bool(t["reuse_head"], "train.reuse_head");
  if (t.contains("optimizer")) {
    const json& o = t["optimizer"];
    if (!o.is_object()) throw ConfigError("train.optimizer: expected an object");
    expect_keys(o, "train.optimizer.", {"kind", "beta1", "beta2", "eps", "momentum"});
    if (o.contains("kind")) {
      std::string kind = need_string(o["kind"], "train.optimizer.kind");
      if (kind == "adam") {
        cfg.optimizer.kind = gkedm::OptimizerKind::kAdam;
      } else if (kind == "sgd") {
        cfg.optimizer.kind = gkedm::OptimizerKind::kSgd;
      } else {
        throw ConfigError("train.optimizer.kind: expected \"adam\" or \"sgd\"");
      }
    }
    if (o.contains("beta1")) cfg.optimizer.beta1 = need_number(o["beta1"], "train.optimizer.beta1");
    if (o.contains("beta2")) cfg.optimizer.beta2 = need_number(o["beta2"], "train.optimizer.beta2");
    if (o.contains("eps")) cfg.optimizer.eps = need_number(o["eps"], "train.optimizer.eps");
    if (o.contains("momentum")) {
      cfg.optimizer.momentum = need_number(o["momentum"], "train.optimizer.momentum");
    }
  }
}

void load_distill_section(const json& d, gkedm::DistillConfig& cfg) {
  expect_keys(d, "distill.",
              {"mode", "alpha", "relations", "kd_temperature", "kd_soft_weight", "kd_hard_weight",
               "lsp_weight", "lsp_kernel", "lsp_sigma", "lsp_poly_degree", "fitnet_weight"});
  if (d.contains("mode")) {
    cfg.mode = gkedm::parse_distill_mode(need_string(d["mode"], "distill.mode"));
  }
  if (d.contains("alpha")) cfg.alpha = need_number(d["alpha"], "distill.alpha");
  if (d.contains("relations")) {
    if (!d["relations"].is_array()) throw ConfigError("distill.relations: expected an array");
    cfg.relation_set.clear();
    for (const auto& r : d["relations"]) {
      cfg.relation_set.push_back(gkedm::parse_relation(need_string(r, "distill.relations[]")));
    }
  }
  if (d.contains("kd_temperature")) {
    cfg.kd_temperature = need_number(d["kd_temperature"], "distill.kd_temperature");
  }
  if (d.contains("kd_soft_weight")) {
    cfg.kd_soft_weight = need_number(d["kd_soft_weight"], "distill.kd_soft_weight");
  }
  if (d.contains("kd_hard_weight")) {
    cfg.kd_hard_weight = need_number(d["kd_hard_weight"], "distill.kd_hard_weight");
  }
  if (d.contains("lsp_weight")) cfg.lsp_weight = need_number(d["lsp_weight"], "distill.lsp_weight");
  if (d.contains("lsp_kernel")) {
    cfg.lsp_kernel = gkedm::parse_lsp_kernel(need_string(d["lsp_kernel"], "distill.lsp_kernel"));
  }
  if (d.contains("lsp_sigma")) cfg.lsp_sigma = need_number(d["lsp_sigma"], "distill.lsp_sigma");
  if (d.contains("lsp_poly_degree")) {
    cfg.lsp_poly_degree = static_cast<int>(need_int(d["lsp_poly_degree"], "distill.lsp_poly_degree"));
  }
  if (d.contains("fitnet_weight")) {
    cfg.fitnet_weight = need_number(d["fitnet_weight"], "distill.fitnet_weight");
  }
}

void load_generator_section(const json& g, GeneratorSettings& gen) {
  expect_keys(g, "data.generator.",
              {"blocks", "nodes_per_block", "p_in", "p_out", "feature_dim", "noise_sigma", "seed",
               "multilabel", "n_labels"});
  gen.present = true;
  auto& b = gen.params.base;
  if (g.contains("blocks")) {
    b.blocks = static_cast<std::size_t>(need_int(g["blocks"], "data.generator.blocks"));
  }
  if (g.contains("nodes_per_block")) {
    b.nodes_per_block =
        static_cast<std::size_t>(need_int(g["nodes_per_block"], "data.generator.nodes_per_block"));
  }
  if (g.contains("p_in")) b.p_in = need_number(g["p_in"], "data.generator.p_in");
  if (g.contains("p_out")) b.p_out = need_number(g["p_out"], "data.generator.p_out");
  if (g.contains("feature_dim")) {
    b.feature_dim =
        static_cast<std::size_t>(need_int(g["feature_dim"], "data.generator.feature_dim"));
  }
  if (g.contains("noise_sigma")) {
    b.noise_sigma = need_number(g["noise_sigma"], "data.generator.noise_sigma");
  }
  if (g.contains("seed")) {
    b.seed = static_cast<std::uint64_t>(need_int(g["seed"], "data.generator.seed"));
  }
  if (g.contains("multilabel")) {
    gen.multilabel = need_bool(g["multilabel"], "data.generator.multilabel");
  }
  if (g.contains("n_labels")) {
    gen.params.n_labels =
        static_cast<std::size_t>(need_int(g["n_labels"], "data.generator.n_labels"));
  }
}

void load_config_file(const std::string& path, Settings& s) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file \"" + path + "\"");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": top level must be an object");
  expect_keys(j, "", {"data", "arch", "student_arch", "train", "distill", "enhance"});
  if (j.contains("arch")) s.arch = need_string(j["arch"], "arch");
  if (j.contains("student_arch")) s.student_arch = need_string(j["student_arch"], "student_arch");
  if (j.contains("data")) {
    const json& d = j["data"];
    if (!d.is_object()) throw ConfigError("data: expected an object");
    expect_keys(d, "data.", {"path", "generator"});
    if (d.contains("path")) s.data_path = need_string(d["path"], "data.path");
    if (d.contains("generator")) {
      if (!d["generator"].is_object()) throw ConfigError("data.generator: expected an object");
      load_generator_section(d["generator"], s.generator);
    }
  }
  if (j.contains("train")) {
    if (!j["train"].is_object()) throw ConfigError("train: expected an object");
    load_train_section(j["train"], s.train);
  }
  if (j.contains("distill")) {
    if (!j["distill"].is_object()) throw ConfigError("distill: expected an object");
    load_distill_section(j["distill"], s.distill);
  }
  if (j.contains("enhance")) {
    const json& e = j["enhance"];
    if (!e.is_object()) throw ConfigError("enhance: expected an object");
    expect_keys(e, "enhance.", {"m", "heads"});
    if (e.contains("m")) s.enhance_m = static_cast<std::size_t>(need_int(e["m"], "enhance.m"));
    if (e.contains("heads")) {
      s.enhance_heads = static_cast<std::size_t>(need_int(e["heads"], "enhance.heads"));
    }
  }
}

gkedm::NodeDataset resolve_dataset(const Settings& s, std::string& desc) {
  if (!s.data_path.empty()) {
    desc = s.data_path;
    return gkedm::load_dataset(s.data_path);
  }
  if (s.generator.present) {
    const auto& b = s.generator.params.base;
    desc = "sbm(b=" + std::to_string(b.blocks) + ",npb=" + std::to_string(b.nodes_per_block) +
           ",seed=" + std::to_string(b.seed) + ")";
    return s.generator.multilabel ? gkedm::multilabel_sbm_generate(s.generator.params)
                                  : gkedm::sbm_generate(b);
  }
  throw ConfigError("no dataset given: pass --data or a config with data.path / data.generator");
}

std::vector<gkedm::RelationKind> parse_relations_flag(const std::string& flag) {
  std::vector<gkedm::RelationKind> out;
  std::stringstream ss(flag);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(gkedm::parse_relation(tok));
  }
  if (out.empty()) throw ConfigError("--relations lists no relations");
  return out;
}

template <typename T>
std::vector<T> parse_number_list(const std::string& flag, const char* what) {
  std::vector<T> out;
  std::stringstream ss(flag);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (tok.empty()) continue;
    try {
      if constexpr (std::is_same_v<T, double>) {
        out.push_back(std::stod(tok));
      } else {
        out.push_back(static_cast<T>(std::stoull(tok)));
      }
    } catch (const std::logic_error&) {
      throw ConfigError(std::string("bad ") + what + " \"" + tok + "\"");
    }
  }
  if (out.empty()) throw ConfigError(std::string("empty ") + what + " list");
  return out;
}

void save_model_and_report(const gkedm::TrainOutcome& out, const std::string& ckpt_path,
                           const std::string& report_path) {
  if (!ckpt_path.empty()) gkedm::save_checkpoint(out.model, ckpt_path);
  if (!report_path.empty()) gkedm::save_report(out.report, report_path);
  std::cerr << out.report.method << ": test metric " << gkedm::fmt_double(out.report.final_metric)
            << " (" << out.report.param_count << " params, best epoch " << out.report.best_epoch
            << ", " << gkedm::fmt_double(out.report.wall_time_s) << "s)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"graph-learning toolkit: attention enhancement and distillation for message-passing networks"};
  app.require_subcommand(1);

  Settings s;
  std::string config_path;
  int threads = 1;

  // the config file is applied before flag parsing so flags take precedence
  for (int i = 1; i + 1 < argc; ++i) {
    if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
  }
  try {
    if (!config_path.empty()) load_config_file(config_path, s);
  } catch (const gkedm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  app.add_option("--config", config_path, "JSON config file; flags override its values");
  app.add_option("--threads", threads, "worker thread count (default 1, deterministic)");

  // --- gen-data ---
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic block-model dataset");
  auto& gp = s.generator.params;
  std::string gen_out;
  gen->add_option("--blocks", gp.base.blocks, "number of blocks");
  gen->add_option("--nodes-per-block", gp.base.nodes_per_block, "nodes per block");
  gen->add_option("--p-in", gp.base.p_in, "intra-block edge probability");
  gen->add_option("--p-out", gp.base.p_out, "inter-block edge probability");
  gen->add_option("--feature-dim", gp.base.feature_dim, "node feature width");
  gen->add_option("--noise", gp.base.noise_sigma, "feature noise sigma");
  gen->add_option("--seed", gp.base.seed, "generator seed");
  gen->add_flag("--multilabel", s.generator.multilabel, "emit a multi-label task");
  gen->add_option("--n-labels", gp.n_labels, "label count (multilabel)");
  gen->add_option("--out", gen_out, "output dataset path (json-lines)")->required();

  // shared training flags
  auto add_train_flags = [&](CLI::App* cmd) {
    cmd->add_option("--data", s.data_path, "dataset path (json-lines)");
    cmd->add_option("--epochs", s.train.epochs, "training epochs");
    cmd->add_option("--lr", s.train.learning_rate, "learning rate");
    cmd->add_option("--weight-decay", s.train.weight_decay, "L2 weight decay");
    cmd->add_option("--patience", s.train.early_stop_patience, "early-stop patience");
    cmd->add_option("--seed", s.train.seed, "run seed");
  };

  // --- pretrain ---
  auto* pre = app.add_subcommand("pretrain", "train a message-passing backbone");
  std::string pre_out, pre_report;
  pre->add_option("--arch", s.arch, "architecture, kind:w1,w2,...");
  add_train_flags(pre);
  pre->add_option("--out", pre_out, "checkpoint output path");
  pre->add_option("--report", pre_report, "training report path (.csv or .json)");

  // --- enhance ---
  auto* enh = app.add_subcommand("enhance", "replace the last conv layer with the attention layer");
  std::string enh_backbone, enh_out, enh_report;
  enh->add_option("--backbone", enh_backbone, "pretrained checkpoint")->required();
  enh->add_option("--m", s.enhance_m, "positional-encoding width");
  enh->add_option("--heads", s.enhance_heads, "attention heads");
  enh->add_option("--backbone-lr-scale", s.train.backbone_lr_scale,
                  "backbone fine-tuning rate scale");
  enh->add_flag("--reuse-head", s.train.reuse_head, "transplant the pretrained classifier head");
  add_train_flags(enh);
  enh->add_option("--out", enh_out, "checkpoint output path");
  enh->add_option("--report", enh_report, "training report path");

  // --- distill ---
  auto* dis = app.add_subcommand("distill", "train a student against a frozen teacher");
  std::string dis_teacher, dis_out, dis_report, dis_mode, dis_relations;
  bool dis_with_baseline = false;
  dis->add_option("--teacher", dis_teacher, "teacher checkpoint")->required();
  dis->add_option("--student-arch", s.student_arch, "student architecture, kind:w1,w2,...");
  dis->add_option("--mode", dis_mode, "attn | kd | fitnet | lsp | none");
  dis->add_option("--alpha", s.distill.alpha, "attention-loss weight");
  dis->add_option("--relations", dis_relations, "comma list of value,query,key");
  dis->add_option("--kd-t", s.distill.kd_temperature, "KD temperature");
  dis->add_option("--kd-soft", s.distill.kd_soft_weight, "KD soft-label weight");
  dis->add_option("--kd-hard", s.distill.kd_hard_weight, "KD hard-label weight");
  std::string dis_lsp_kernel;
  dis->add_option("--lsp-kernel", dis_lsp_kernel, "rbf | poly | linear");
  dis->add_option("--lsp-sigma", s.distill.lsp_sigma, "RBF sigma");
  dis->add_option("--lsp-degree", s.distill.lsp_poly_degree, "poly degree");
  dis->add_option("--lsp-weight", s.distill.lsp_weight, "LSP loss weight");
  dis->add_option("--fitnet-weight", s.distill.fitnet_weight, "FitNet loss weight");
  dis->add_flag("--with-baseline", dis_with_baseline,
                "also train the undistilled twin and record the improvement");
  add_train_flags(dis);
  dis->add_option("--out", dis_out, "student checkpoint output path");
  dis->add_option("--report", dis_report, "training report path");

  // --- eval ---
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string ev_model, ev_split = "test";
  ev->add_option("--model", ev_model, "model checkpoint")->required();
  ev->add_option("--split", ev_split, "train | val | test");
  ev->add_option("--data", s.data_path, "dataset path (json-lines)");

  // --- alpha-sweep ---
  auto* sw = app.add_subcommand("alpha-sweep", "distillation improvement across alpha values");
  std::string sw_teacher, sw_out, sw_alphas = "0.01,0.1,1.0", sw_seeds = "1,2,3,4,5";
  std::string sw_relations;
  sw->add_option("--teacher", sw_teacher, "teacher checkpoint")->required();
  sw->add_option("--student-arch", s.student_arch, "student architecture");
  sw->add_option("--alphas", sw_alphas, "comma list of alpha values");
  sw->add_option("--seeds", sw_seeds, "comma list of seeds");
  sw->add_option("--relations", sw_relations, "comma list of value,query,key");
  add_train_flags(sw);
  sw->add_option("--out", sw_out, "sweep CSV output path")->required();

  // --- report ---
  auto* rep = app.add_subcommand("report", "merge run reports into one summary table");
  std::vector<std::string> rep_in;
  std::string rep_out, rep_format = "csv";
  rep->add_option("--in", rep_in, "input report files (full .json or summary .csv/.json)")
      ->required();
  rep->add_option("--out", rep_out, "output path")->required();
  rep->add_option("--format", rep_format, "csv | json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

#ifdef _OPENMP
  if (threads < 1) {
    std::cerr << "error: --threads must be >= 1\n";
    return 1;
  }
  omp_set_num_threads(threads);
#endif

  try {
    if (gen->parsed()) {
      gkedm::NodeDataset ds = s.generator.multilabel
                                  ? gkedm::multilabel_sbm_generate(gp)
                                  : gkedm::sbm_generate(gp.base);
      gkedm::save_dataset(ds, gen_out);
      std::cerr << "wrote " << gen_out << " (" << ds.n_nodes() << " nodes, "
                << ds.graph.n_edges() << " directed edges)\n";
      return 0;
    }

    if (pre->parsed()) {
      std::string desc;
      gkedm::NodeDataset ds = resolve_dataset(s, desc);
      auto out = gkedm::pretrain_gcn(ds, gkedm::parse_arch(s.arch), s.train, desc);
      save_model_and_report(out, pre_out, pre_report);
      return 0;
    }

    if (enh->parsed()) {
      std::string desc;
      gkedm::NodeDataset ds = resolve_dataset(s, desc);
      gkedm::Model backbone = gkedm::load_checkpoint(enh_backbone);
      auto out = gkedm::enhance_with_gkedm(backbone, ds, s.enhance_m, s.enhance_heads, s.train, desc);
      save_model_and_report(out, enh_out, enh_report);
      return 0;
    }

    if (dis->parsed()) {
      std::string desc;
      gkedm::NodeDataset ds = resolve_dataset(s, desc);
      gkedm::Model teacher = gkedm::load_checkpoint(dis_teacher);
      if (!dis_mode.empty()) s.distill.mode = gkedm::parse_distill_mode(dis_mode);
      if (!dis_relations.empty()) s.distill.relation_set = parse_relations_flag(dis_relations);
      if (!dis_lsp_kernel.empty()) s.distill.lsp_kernel = gkedm::parse_lsp_kernel(dis_lsp_kernel);
      auto arch = gkedm::parse_arch(s.student_arch);
      auto out = gkedm::distill_student(teacher, arch, ds, s.distill, s.train, desc);
      if (dis_with_baseline) {
        gkedm::DistillConfig none = s.distill;
        none.mode = gkedm::DistillMode::kNone;
        auto base = gkedm::distill_student(teacher, arch, ds, none, s.train, desc);
        out.report.baseline_metric = base.report.final_metric;
      }
      save_model_and_report(out, dis_out, dis_report);
      return 0;
    }

    if (ev->parsed()) {
      std::string desc;
      gkedm::NodeDataset ds = resolve_dataset(s, desc);
      gkedm::Model model = gkedm::load_checkpoint(ev_model);
      double metric = gkedm::evaluate(model, ds, gkedm::parse_split(ev_split));
      std::cout << ev_split << " " << gkedm::fmt_double(metric) << "\n";
      return 0;
    }

    if (sw->parsed()) {
      std::string desc;
      gkedm::NodeDataset ds = resolve_dataset(s, desc);
      gkedm::Model teacher = gkedm::load_checkpoint(sw_teacher);
      if (!sw_relations.empty()) s.distill.relation_set = parse_relations_flag(sw_relations);
      auto alphas = parse_number_list<double>(sw_alphas, "alpha");
      auto seeds = parse_number_list<std::uint64_t>(sw_seeds, "seed");
      auto rows = gkedm::alpha_sweep(teacher, gkedm::parse_arch(s.student_arch), ds, alphas, seeds,
                                     s.distill, s.train);
      gkedm::write_alpha_sweep_csv(rows, sw_out);
      std::cerr << "wrote " << sw_out << " (" << rows.size() << " rows)\n";
      return 0;
    }

    if (rep->parsed()) {
      std::vector<gkedm::TrainReport> all;
      for (const std::string& path : rep_in) {
        for (auto& r : gkedm::read_reports(path)) all.push_back(std::move(r));
      }
      gkedm::ReportFormat fmt;
      if (rep_format == "csv") {
        fmt = gkedm::ReportFormat::kCsv;
      } else if (rep_format == "json") {
        fmt = gkedm::ReportFormat::kJson;
      } else {
        throw ConfigError("--format must be csv or json");
      }
      gkedm::report_emit(all, rep_out, fmt);
      std::cerr << "wrote " << rep_out << " (" << all.size() << " rows)\n";
      return 0;
    }
  } catch (const gkedm::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 2;
  } catch (const gkedm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
