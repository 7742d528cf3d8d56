#include "paid/metrics.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <set>
#include <sstream>

#include "json.hpp"

#include "paid/error.hpp"

namespace paid {

using nlohmann::json;

std::string_view to_string(RecordKind kind) noexcept {
  switch (kind) {
    case RecordKind::epoch: return "epoch";
    case RecordKind::report: return "report";
    case RecordKind::battery: return "battery";
  }
  return "?";
}

RecordKind parse_record_kind(std::string_view text) {
  for (auto k : {RecordKind::epoch, RecordKind::report, RecordKind::battery}) {
    if (text == to_string(k)) return k;
  }
  throw ParameterError("unknown record kind '" + std::string(text) + "'");
}

std::string to_json_line(const MetricsRecord& record) {
  json payload = json::object();
  for (const auto& [k, v] : record.payload) {
    if (!std::isfinite(v)) throw ContractError("metrics: field '" + k + "' is not finite");
    payload[k] = v;
  }
  json j = {{"run_id", record.run_id},
            {"timestamp", record.timestamp},
            {"kind", std::string(to_string(record.kind))},
            {"tags", record.tags},
            {"payload", payload}};
  return j.dump();
}

MetricsRecord parse_json_line(std::string_view line) {
  try {
    const auto j = json::parse(line);
    MetricsRecord r;
    r.run_id = j.at("run_id").get<std::string>();
    r.timestamp = j.at("timestamp").get<std::string>();
    r.kind = parse_record_kind(j.at("kind").get<std::string>());
    r.tags = j.at("tags").get<std::map<std::string, std::string>>();
    r.payload = j.at("payload").get<std::map<std::string, double>>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(FormatError::Kind::value_out_of_range, std::string("metrics: malformed line: ") + e.what());
  } catch (const ParameterError& e) {
    throw FormatError(FormatError::Kind::value_out_of_range, std::string("metrics: ") + e.what());
  }
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, std::string run_id, bool wall_clock)
    : out_(path, std::ios::app), run_id_(std::move(run_id)), wall_clock_(wall_clock) {
  if (!out_) throw FormatError(FormatError::Kind::io, "metrics: cannot open '" + path.string() + "'");
}

void MetricsWriter::write(RecordKind kind, std::map<std::string, double> payload,
                          std::map<std::string, std::string> tags) {
  MetricsRecord r{run_id_, {}, kind, std::move(tags), std::move(payload)};
  if (wall_clock_) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &utc);
    r.timestamp = buf;
  } else {
    r.timestamp = "seq:" + std::to_string(sequence_);
  }
  ++sequence_;
  out_ << to_json_line(r) << '\n';
  out_.flush();
  if (!out_) throw FormatError(FormatError::Kind::io, "metrics: write failed");
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(FormatError::Kind::io, "metrics: cannot open '" + path.string() + "'");
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(parse_json_line(line));
  }
  return out;
}

std::map<std::string, double> epoch_payload(const EpochLog& log) {
  std::map<std::string, double> p{{"epoch", log.epoch},
                                  {"lr", static_cast<double>(log.lr)},
                                  {"clean_acc", log.clean_acc},
                                  {"pgd10_acc", log.pgd10_acc},
                                  {"swa_active", log.swa_active ? 1.0 : 0.0}};
  for (const auto& [k, v] : log.train) p["train." + k] = v;
  for (const auto& [k, v] : log.extra) p[k] = v;
  return p;
}

std::map<std::string, double> report_payload(const RobustnessReport& report) {
  std::map<std::string, double> p{{"samples", static_cast<double>(report.samples)}, {"clean", report.clean}};
  for (const auto& [name, acc] : report.attacks) p[name] = acc;
  return p;
}

std::map<std::string, double> battery_payload(const BatteryReport& report) {
  std::map<std::string, double> p;
  for (const auto& c : report.checks) {
    p[c.name + ".passed"] = c.passed ? (*c.passed ? 1.0 : 0.0) : -1.0;
    for (const auto& [k, v] : c.values) p[c.name + "." + k] = v;
  }
  return p;
}

std::string comparison_csv(std::span<const MetricsRecord> records) {
  static constexpr std::string_view kColumns[] = {"clean", "fgsm", "pgd20"};
  struct Acc {
    std::size_t runs = 0;
    std::map<std::string, std::pair<double, std::size_t>> sums;
  };
  std::map<std::string, Acc> by_method;
  for (const auto& r : records) {
    if (r.kind != RecordKind::report) continue;
    const auto it = r.tags.find("method");
    if (it == r.tags.end()) continue;
    auto& acc = by_method[it->second];
    ++acc.runs;
    for (auto col : kColumns) {
      if (const auto v = r.payload.find(std::string(col)); v != r.payload.end()) {
        auto& [sum, n] = acc.sums[std::string(col)];
        sum += v->second;
        ++n;
      }
    }
  }
  std::ostringstream out;
  out.precision(6);
  out << std::fixed << "method,runs";
  for (auto col : kColumns) out << ',' << col;
  out << '\n';
  for (const auto& [method, acc] : by_method) {
    out << method << ',' << acc.runs;
    for (auto col : kColumns) {
      out << ',';
      if (const auto s = acc.sums.find(std::string(col)); s != acc.sums.end()) {
        out << s->second.first / static_cast<double>(s->second.second);
      }
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace paid
