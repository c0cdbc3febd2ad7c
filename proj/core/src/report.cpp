#include "fcac/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fcac/embedding.hpp"
#include "fcac/error.hpp"

namespace fcac {

namespace {

using json = nlohmann::json;

constexpr Partition kPartitions[] = {Partition::base, Partition::novel, Partition::both};

Partition partition_from_string(const std::string& name) {
  for (auto p : kPartitions) {
    if (name == to_string(p)) return p;
  }
  throw FormatError("unknown partition '" + name + "'");
}

json optional_json(const std::optional<Real>& v) { return v ? json(*v) : json(nullptr); }

std::optional<Real> optional_from(const json& v) {
  return v.is_null() ? std::nullopt : std::optional<Real>(v.get<Real>());
}

json partition_map(const std::map<Partition, std::optional<Real>>& m) {
  json out = json::object();
  for (const auto& [p, v] : m) out[to_string(p)] = optional_json(v);
  return out;
}

std::map<Partition, std::optional<Real>> partition_map_from(const json& doc) {
  std::map<Partition, std::optional<Real>> out;
  for (const auto& [k, v] : doc.items()) out[partition_from_string(k)] = optional_from(v);
  return out;
}

std::string percent(const std::optional<Real>& v) {
  if (!v) return "-";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", double(*v) * 100.0);
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace

json report_to_json(const SessionReport& r, bool include_timing) {
  json doc;
  doc["mode"] = r.mode;
  doc["eval_mode"] = r.eval_mode;
  doc["alternate_eval_mode"] = r.alternate_eval_mode;
  doc["seed"] = r.seed;
  doc["dim"] = r.dim;
  json sessions = json::array();
  for (const auto& s : r.sessions) {
    json samples = json::object();
    for (const auto& [p, n] : s.samples) samples[to_string(p)] = n;
    sessions.push_back({{"index", s.index},
                        {"accuracy", partition_map(s.accuracy)},
                        {"samples", samples},
                        {"alternate_accuracy", partition_map(s.alternate_accuracy)},
                        {"store_size", s.store_size},
                        {"support", s.support_count},
                        {"queries", s.query_count}});
  }
  doc["sessions"] = sessions;
  doc["aa"] = partition_map(r.aa);
  doc["pd"] = partition_map(r.pd);
  doc["confusion"] = {{"classes", r.final_confusion.classes}, {"counts", r.final_confusion.counts}};
  doc["incremental_classes"] = r.incremental_classes;
  doc["ss_elements"] = r.ss_elements;
  doc["failure"] = r.failure ? json(*r.failure) : json(nullptr);
  if (include_timing) doc["timing"] = timing_to_json(r);
  return doc;
}

json timing_to_json(const SessionReport& r) {
  json updates = json::array();
  for (const auto& s : r.sessions) {
    if (s.index > 0) updates.push_back(s.update_seconds);
  }
  return {{"att_seconds", r.att_seconds ? json(*r.att_seconds) : json(nullptr)},
          {"update_seconds", updates},
          {"hardware", r.hardware_note}};
}

SessionReport report_from_json(const json& doc) {
  try {
    SessionReport r;
    r.mode = doc.at("mode").get<std::string>();
    r.eval_mode = doc.at("eval_mode").get<std::string>();
    r.alternate_eval_mode = doc.at("alternate_eval_mode").get<std::string>();
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.dim = doc.at("dim").get<std::size_t>();
    for (const auto& s : doc.at("sessions")) {
      SessionResult sr;
      sr.index = s.at("index").get<std::size_t>();
      sr.accuracy = partition_map_from(s.at("accuracy"));
      sr.alternate_accuracy = partition_map_from(s.at("alternate_accuracy"));
      for (const auto& [k, v] : s.at("samples").items()) sr.samples[partition_from_string(k)] = v.get<std::size_t>();
      sr.store_size = s.at("store_size").get<std::size_t>();
      sr.support_count = s.at("support").get<std::size_t>();
      sr.query_count = s.at("queries").get<std::size_t>();
      r.sessions.push_back(std::move(sr));
    }
    r.aa = partition_map_from(doc.at("aa"));
    r.pd = partition_map_from(doc.at("pd"));
    r.final_confusion.classes = doc.at("confusion").at("classes").get<std::vector<ClassId>>();
    r.final_confusion.counts = doc.at("confusion").at("counts").get<std::vector<std::vector<std::size_t>>>();
    r.incremental_classes = doc.at("incremental_classes").get<std::size_t>();
    r.ss_elements = doc.at("ss_elements").get<std::size_t>();
    if (!doc.at("failure").is_null()) r.failure = doc.at("failure").get<std::string>();
    if (doc.contains("timing")) {
      const auto& t = doc.at("timing");
      if (!t.at("att_seconds").is_null()) r.att_seconds = t.at("att_seconds").get<double>();
      r.hardware_note = t.at("hardware").get<std::string>();
      const auto& updates = t.at("update_seconds");
      std::size_t u = 0;
      for (auto& s : r.sessions) {
        if (s.index > 0 && u < updates.size()) s.update_seconds = updates[u++].get<double>();
      }
    }
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what());
  }
}

std::string report_to_csv(const SessionReport& r) {
  std::ostringstream os;
  os << "session,partition,accuracy,samples\n";
  for (const auto& s : r.sessions) {
    for (auto p : kPartitions) {
      const auto it = s.accuracy.find(p);
      if (it == s.accuracy.end() || !it->second) continue;
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.17g", double(*it->second));
      os << s.index << ',' << to_string(p) << ',' << buf << ',' << s.samples.at(p) << '\n';
    }
  }
  return os.str();
}

std::string report_to_markdown(const SessionReport& r) {
  std::ostringstream os;
  os << "| Partition |";
  for (const auto& s : r.sessions) os << ' ' << s.index << " |";
  os << " AA | PD |\n|---|";
  for (std::size_t i = 0; i < r.sessions.size() + 2; ++i) os << "---|";
  os << '\n';
  for (auto p : kPartitions) {
    os << "| " << to_string(p) << " |";
    for (const auto& v : r.accuracy_row(p)) os << ' ' << percent(v) << " |";
    const auto aa = r.aa.find(p);
    const auto pd = r.pd.find(p);
    os << ' ' << percent(aa == r.aa.end() ? std::nullopt : aa->second) << " | "
       << percent(pd == r.pd.end() ? std::nullopt : pd->second) << " |\n";
  }
  if (!r.alternate_eval_mode.empty()) {
    os << "| Both (" << r.alternate_eval_mode << ") |";
    for (const auto& s : r.sessions) {
      const auto it = s.alternate_accuracy.find(Partition::both);
      os << ' ' << percent(it == s.alternate_accuracy.end() ? std::nullopt : it->second) << " |";
    }
    os << " - | - |\n";
  }
  return os.str();
}

void emit_report(const SessionReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_text(dir / "timing.json", timing_to_json(report).dump(2) + "\n");
  write_text(dir / "report.csv", report_to_csv(report));
  write_text(dir / "report.md", report_to_markdown(report));
}

void dump_prototypes(const std::filesystem::path& path, const PrototypeStore& store) {
  std::vector<Embedding> rows;
  for (const auto& e : store.entries()) rows.push_back({"proto_" + std::to_string(e.class_id), e.class_id, e.vector});
  save_embeddings_text(path, rows, store.dim());
}

}  // namespace fcac
