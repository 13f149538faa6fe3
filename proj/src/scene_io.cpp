#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "cereid/error.hpp"
#include "cereid/scene.hpp"

namespace cereid {
namespace {

using nlohmann::json;

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last && !s.empty();
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json delay_to_json(const DelayLaw& d) {
  if (d.kind == DelayLaw::Kind::Deterministic) return json{{"kind", "fixed"}, {"tau", d.tau}};
  return json{{"kind", "lognormal"}, {"mu", d.mu}, {"sigma", d.sigma}};
}

DelayLaw delay_from_json(const json& j) {
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "fixed") return DelayLaw::fixed(j.at("tau").get<std::int64_t>());
  if (kind == "lognormal") return DelayLaw::lognormal(j.at("mu").get<double>(), j.at("sigma").get<double>());
  throw ConfigError("unknown delay kind '" + kind + "'");
}

}  // namespace

void export_csv(const Scene& scene, std::ostream& out) {
  const std::size_t f = scene.feature_dim();
  out << "identity,camera,timestamp";
  for (std::size_t i = 0; i < f; ++i) out << ",f" << i;
  out << '\n';
  for (const auto& o : scene.observations) {
    const std::int64_t label =
        o.camera < scene.camera_labels.size() ? scene.camera_labels[o.camera] : static_cast<std::int64_t>(o.camera);
    out << o.identity << ',' << label << ',' << o.timestamp;
    for (double v : o.feature) out << ',' << format_double(v);
    out << '\n';
  }
}

void export_csv(const Scene& scene, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  export_csv(scene, out);
  if (!out) throw InputError("failed writing '" + path + "'");
}

Scene ingest_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DatasetError(source + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_fields(line);
  if (header.size() < 3 || header[0] != "identity" || header[1] != "camera" || header[2] != "timestamp") {
    throw DatasetError(source + ":1: header must start with identity,camera,timestamp");
  }
  const std::size_t fdim = header.size() - 3;
  for (std::size_t i = 0; i < fdim; ++i) {
    if (header[3 + i] != "f" + std::to_string(i)) {
      throw DatasetError(source + ":1: expected feature column f" + std::to_string(i) + ", got '" + header[3 + i] + "'");
    }
  }

  struct Row {
    std::int64_t identity, camera, timestamp;
    std::vector<double> feature;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  std::size_t renormalized = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() != header.size()) {
      throw DatasetError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                         std::to_string(fields.size()) + " (inconsistent feature dimensionality)");
    }
    Row r;
    if (!parse_number(fields[0], r.identity) || r.identity < 0) throw DatasetError(where + ": bad identity '" + fields[0] + "'");
    if (!parse_number(fields[1], r.camera)) throw DatasetError(where + ": bad camera '" + fields[1] + "'");
    if (!parse_number(fields[2], r.timestamp) || r.timestamp < 0) {
      throw DatasetError(where + ": bad timestamp '" + fields[2] + "'");
    }
    r.feature.resize(fdim);
    double norm = 0.0;
    for (std::size_t i = 0; i < fdim; ++i) {
      if (!parse_number(fields[3 + i], r.feature[i]) || !std::isfinite(r.feature[i])) {
        throw DatasetError(where + ": bad feature value '" + fields[3 + i] + "'");
      }
      norm += r.feature[i] * r.feature[i];
    }
    if (fdim > 0) {
      norm = std::sqrt(norm);
      if (norm == 0.0) throw DatasetError(where + ": zero feature vector");
      if (std::abs(norm - 1.0) > 1e-9) {
        for (double& v : r.feature) v /= norm;
        ++renormalized;
      }
    }
    rows.push_back(std::move(r));
  }

  Scene scene;
  std::map<std::int64_t, std::size_t> dense;
  for (const auto& r : rows) dense.emplace(r.camera, 0);
  for (auto& [label, idx] : dense) {
    idx = scene.camera_labels.size();
    scene.camera_labels.push_back(label);
  }
  scene.num_cameras = dense.size();
  bool gap = false;
  for (std::size_t i = 0; i < scene.camera_labels.size(); ++i) gap |= scene.camera_labels[i] != static_cast<std::int64_t>(i);
  if (gap) scene.warnings.push_back(source + ": camera labels remapped to a dense 0..C-1 range");
  if (renormalized > 0) {
    scene.warnings.push_back(source + ": renormalized " + std::to_string(renormalized) + " off-norm feature vectors");
  }
  for (auto& r : rows) {
    scene.observations.push_back(Observation{r.identity, dense.at(r.camera), r.timestamp, std::move(r.feature)});
  }
  scene.sort_observations();
  return scene;
}

Scene ingest_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open '" + path + "'");
  return ingest_csv(in, path);
}

Scene ingest(const std::string& path, const std::string& format) {
  if (format != "csv") throw ConfigError("unsupported scene format '" + format + "'");
  return ingest_csv(path);
}

std::string spec_to_json(const GeneratorSpec& s) {
  json edges = json::array();
  for (const auto& e : s.edges) {
    edges.push_back({{"from", e.from}, {"to", e.to}, {"probability", e.probability}, {"delay", delay_to_json(e.delay)}});
  }
  json j{{"num_cameras", s.num_cameras},
         {"edges", edges},
         {"start_distribution", s.start_distribution},
         {"start_time_horizon", s.start_time_horizon},
         {"num_identities", s.num_identities},
         {"visits_per_identity", s.visits_per_identity},
         {"dwell", s.dwell},
         {"visibility", s.visibility},
         {"feature_dim", s.feature_dim},
         {"feature_noise", s.feature_noise}};
  return j.dump(2) + "\n";
}

GeneratorSpec spec_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator spec: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("generator spec: expected an object");
  static const std::vector<std::string> known = {"num_cameras", "edges", "start_distribution", "start_time_horizon",
                                                 "num_identities", "visits_per_identity", "dwell", "visibility",
                                                 "feature_dim", "feature_noise"};
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("generator spec: unknown key '" + key + "'");
    }
  }
  GeneratorSpec s;
  try {
    s.num_cameras = j.at("num_cameras").get<std::size_t>();
    for (const auto& e : j.at("edges")) {
      s.edges.push_back(TransitionEdge{e.at("from").get<std::size_t>(), e.at("to").get<std::size_t>(),
                                       e.at("probability").get<double>(), delay_from_json(e.at("delay"))});
    }
    s.start_distribution = j.value("start_distribution", std::vector<double>{});
    s.start_time_horizon = j.value("start_time_horizon", std::int64_t{0});
    s.num_identities = j.at("num_identities").get<std::size_t>();
    s.visits_per_identity = j.value("visits_per_identity", std::size_t{1});
    s.dwell = j.value("dwell", std::int64_t{0});
    s.visibility = j.value("visibility", 1.0);
    s.feature_dim = j.value("feature_dim", std::size_t{0});
    s.feature_noise = j.value("feature_noise", 0.0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("generator spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace cereid
