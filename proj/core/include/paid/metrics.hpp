#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "paid/eval.hpp"
#include "paid/trainer.hpp"

namespace paid {

enum class RecordKind : std::uint8_t { epoch, report, battery };

[[nodiscard]] std::string_view to_string(RecordKind kind) noexcept;
[[nodiscard]] RecordKind parse_record_kind(std::string_view text);

/// One line of a metrics stream.
struct MetricsRecord {
  std::string run_id;
  /// ISO-8601 UTC time, or "seq:N" when wall-clock stamps are disabled.
  std::string timestamp;
  RecordKind kind = RecordKind::epoch;
  /// Descriptive strings (method, attack names, check names).
  std::map<std::string, std::string> tags;
  std::map<std::string, double> payload;

  bool operator==(const MetricsRecord&) const = default;
};

[[nodiscard]] std::string to_json_line(const MetricsRecord& record);
/// Throws FormatError(value_out_of_range) on malformed lines.
[[nodiscard]] MetricsRecord parse_json_line(std::string_view line);

/// Append-only JSON-lines writer; one flushed line per record.
class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, std::string run_id, bool wall_clock = false);

  void write(RecordKind kind, std::map<std::string, double> payload, std::map<std::string, std::string> tags = {});

 private:
  std::ofstream out_;
  std::string run_id_;
  bool wall_clock_;
  std::uint64_t sequence_ = 0;
};

/// Reads every record of a metrics stream.
[[nodiscard]] std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path);

[[nodiscard]] std::map<std::string, double> epoch_payload(const EpochLog& log);
[[nodiscard]] std::map<std::string, double> report_payload(const RobustnessReport& report);
[[nodiscard]] std::map<std::string, double> battery_payload(const BatteryReport& report);

/// CSV with one row per method: method,runs,clean,fgsm,pgd20 (means over the
/// report records carrying a "method" tag). Missing columns are left empty.
[[nodiscard]] std::string comparison_csv(std::span<const MetricsRecord> records);

}  // namespace paid
