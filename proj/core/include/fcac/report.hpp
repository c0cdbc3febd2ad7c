#pragma once

// Report rendering. report.json holds only seed-determined values; wall-clock
// figures (ATT, per-session update times, hardware note) go to timing.json so
// identical runs produce identical report files.

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "fcac/classifier.hpp"
#include "fcac/protocol.hpp"

namespace fcac {

nlohmann::json report_to_json(const SessionReport& report, bool include_timing = false);
SessionReport report_from_json(const nlohmann::json& doc);
nlohmann::json timing_to_json(const SessionReport& report);

/// Header plus one row per (session, partition with samples).
std::string report_to_csv(const SessionReport& report);
/// Accuracy grid in percent: sessions as columns, then AA and PD; "-" for absent cells.
std::string report_to_markdown(const SessionReport& report);

/// Writes report.json, timing.json, report.csv and report.md into `dir`.
void emit_report(const SessionReport& report, const std::filesystem::path& dir);

/// Prototype vectors in the embedding text format (id "proto_<class>").
void dump_prototypes(const std::filesystem::path& path, const PrototypeStore& store);

}  // namespace fcac
