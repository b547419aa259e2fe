#include "gkedm/report.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "gkedm/errors.hpp"

namespace gkedm {

using json = nlohmann::ordered_json;

std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ParseError("bad number \"" + s + "\"");
  }
  return v;
}

void write_text_atomic(const std::string& path, const std::string& contents) {
  namespace fs = std::filesystem;
  fs::path tmp = fs::path(path);
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open \"" + tmp.string() + "\" for writing");
    out << contents;
    if (!out) throw Error("short write to \"" + tmp.string() + "\"");
  }
  fs::rename(tmp, path);
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

json report_to_json(const TrainReport& r) {
  json j;
  j["model"] = r.model;
  j["dataset"] = r.dataset;
  j["method"] = r.method;
  j["alpha"] = r.alpha;
  j["seed"] = r.seed;
  j["param_count"] = r.param_count;
  if (r.baseline_metric) {
    j["baseline_metric"] = *r.baseline_metric;
  } else {
    j["baseline_metric"] = nullptr;
  }
  j["final_metric"] = r.final_metric;
  j["best_epoch"] = r.best_epoch;
  if (!r.config_echo.empty()) {
    j["config"] = json::parse(r.config_echo);
  } else {
    j["config"] = nullptr;
  }
  json rows = json::array();
  for (const EpochRow& e : r.rows) {
    rows.push_back({{"epoch", e.epoch},
                    {"train_loss", e.train_loss},
                    {"l_task", e.l_task},
                    {"l_a", e.l_a},
                    {"l_vr", e.l_vr},
                    {"l_kd", e.l_kd},
                    {"l_lsp", e.l_lsp},
                    {"l_fitnet", e.l_fitnet},
                    {"val_metric", e.val_metric}});
  }
  j["rows"] = std::move(rows);
  return j;
}

TrainReport report_from_json(const json& j) {
  TrainReport r;
  r.model = j.at("model").get<std::string>();
  r.dataset = j.at("dataset").get<std::string>();
  r.method = j.at("method").get<std::string>();
  r.alpha = j.at("alpha").get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.param_count = j.at("param_count").get<std::size_t>();
  if (j.contains("baseline_metric") && !j.at("baseline_metric").is_null()) {
    r.baseline_metric = j.at("baseline_metric").get<double>();
  }
  r.final_metric = j.at("final_metric").get<double>();
  r.best_epoch = j.value("best_epoch", 0);
  if (j.contains("config") && !j.at("config").is_null()) {
    r.config_echo = j.at("config").dump();
  }
  if (j.contains("rows")) {
    for (const auto& e : j.at("rows")) {
      EpochRow row;
      row.epoch = e.at("epoch").get<int>();
      row.train_loss = e.at("train_loss").get<double>();
      row.l_task = e.at("l_task").get<double>();
      row.l_a = e.at("l_a").get<double>();
      row.l_vr = e.at("l_vr").get<double>();
      row.l_kd = e.at("l_kd").get<double>();
      row.l_lsp = e.at("l_lsp").get<double>();
      row.l_fitnet = e.at("l_fitnet").get<double>();
      row.val_metric = e.at("val_metric").get<double>();
      r.rows.push_back(row);
    }
  }
  return r;
}

std::string report_to_csv(const TrainReport& r) {
  std::ostringstream out;
  out << "# model: " << r.model << "\n";
  out << "# dataset: " << r.dataset << "\n";
  out << "# method: " << r.method << "\n";
  out << "# alpha: " << fmt_double(r.alpha) << "\n";
  out << "# seed: " << r.seed << "\n";
  out << "# param_count: " << r.param_count << "\n";
  if (r.baseline_metric) out << "# baseline_metric: " << fmt_double(*r.baseline_metric) << "\n";
  out << "# final_metric: " << fmt_double(r.final_metric) << "\n";
  out << "# best_epoch: " << r.best_epoch << "\n";
  if (!r.config_echo.empty()) out << "# config: " << r.config_echo << "\n";
  out << "epoch,train_loss,l_task,l_a,l_vr,l_kd,l_lsp,l_fitnet,val_metric\n";
  for (const EpochRow& e : r.rows) {
    out << e.epoch << ',' << fmt_double(e.train_loss) << ',' << fmt_double(e.l_task) << ','
        << fmt_double(e.l_a) << ',' << fmt_double(e.l_vr) << ',' << fmt_double(e.l_kd) << ','
        << fmt_double(e.l_lsp) << ',' << fmt_double(e.l_fitnet) << ','
        << fmt_double(e.val_metric) << "\n";
  }
  return out.str();
}

}  // namespace

void save_report(const TrainReport& r, const std::string& path) {
  if (ends_with(path, ".json")) {
    write_text_atomic(path, report_to_json(r).dump(2) + "\n");
  } else {
    write_text_atomic(path, report_to_csv(r));
  }
}

TrainReport load_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open report \"" + path + "\"");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  try {
    return report_from_json(j);
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

namespace {

constexpr const char* kSummaryHeader =
    "model,dataset,params_M,baseline_metric,method,alpha,final_metric,improvement,seed";

json summary_json(const TrainReport& r) {
  json j;
  j["model"] = r.model;
  j["dataset"] = r.dataset;
  j["params_M"] = static_cast<double>(r.param_count) / 1e6;
  if (r.baseline_metric) {
    j["baseline_metric"] = *r.baseline_metric;
  } else {
    j["baseline_metric"] = nullptr;
  }
  j["method"] = r.method;
  j["alpha"] = r.alpha;
  j["final_metric"] = r.final_metric;
  if (auto imp = r.improvement()) {
    j["improvement"] = *imp;
  } else {
    j["improvement"] = nullptr;
  }
  j["seed"] = r.seed;
  return j;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void report_emit(const std::vector<TrainReport>& reports, const std::string& path,
                 ReportFormat format) {
  if (reports.empty()) throw ContractError("report_emit needs at least one report");
  if (format == ReportFormat::kJson) {
    json arr = json::array();
    for (const TrainReport& r : reports) arr.push_back(summary_json(r));
    write_text_atomic(path, arr.dump(2) + "\n");
    return;
  }
  std::ostringstream out;
  out << kSummaryHeader << "\n";
  for (const TrainReport& r : reports) {
    out << r.model << ',' << r.dataset << ',' << fmt_double(static_cast<double>(r.param_count) / 1e6)
        << ',' << (r.baseline_metric ? fmt_double(*r.baseline_metric) : "") << ',' << r.method
        << ',' << fmt_double(r.alpha) << ',' << fmt_double(r.final_metric) << ','
        << (r.improvement() ? fmt_double(*r.improvement()) : "") << ',' << r.seed << "\n";
  }
  write_text_atomic(path, out.str());
}

std::vector<TrainReport> read_reports(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open \"" + path + "\"");
  std::vector<TrainReport> out;
  if (ends_with(path, ".json")) {
    json j;
    try {
      in >> j;
    } catch (const json::parse_error& e) {
      throw ParseError(path + ": " + e.what());
    }
    try {
      if (j.is_array()) {
        for (const auto& item : j) {
          TrainReport r;
          r.model = item.at("model").get<std::string>();
          r.dataset = item.at("dataset").get<std::string>();
          r.param_count =
              static_cast<std::size_t>(item.at("params_M").get<double>() * 1e6 + 0.5);
          if (!item.at("baseline_metric").is_null()) {
            r.baseline_metric = item.at("baseline_metric").get<double>();
          }
          r.method = item.at("method").get<std::string>();
          r.alpha = item.at("alpha").get<double>();
          r.final_metric = item.at("final_metric").get<double>();
          r.seed = item.at("seed").get<std::uint64_t>();
          out.push_back(std::move(r));
        }
      } else {
        out.push_back(report_from_json(j));
      }
    } catch (const json::exception& e) {
      throw ParseError(path + ": " + e.what());
    }
    return out;
  }

  std::string line;
  std::size_t lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != kSummaryHeader) {
        throw ParseError(path + ":" + std::to_string(lineno) + ": expected summary header \"" +
                         kSummaryHeader + "\"");
      }
      saw_header = true;
      continue;
    }
    auto cells = split_csv_line(line);
    if (cells.size() != 9) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": expected 9 columns");
    }
    TrainReport r;
    r.model = cells[0];
    r.dataset = cells[1];
    r.param_count = static_cast<std::size_t>(parse_double(cells[2]) * 1e6 + 0.5);
    if (!cells[3].empty()) r.baseline_metric = parse_double(cells[3]);
    r.method = cells[4];
    r.alpha = parse_double(cells[5]);
    r.final_metric = parse_double(cells[6]);
    r.seed = static_cast<std::uint64_t>(std::stoull(cells[8]));
    out.push_back(std::move(r));
  }
  if (!saw_header) throw ParseError(path + ": missing summary header");
  return out;
}

}  // namespace gkedm
