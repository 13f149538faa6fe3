#include "cereid/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

#include "cereid/error.hpp"

namespace cereid {
namespace {

using nlohmann::json;

// Walks one JSON object, remembering which keys were read so leftovers can be
// reported as typos.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!has(key)) return;
    if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
      if (!j_.at(key).is_number_unsigned()) throw ConfigError(field(key) + ": expected a non-negative integer");
    }
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(field(key) + ": wrong type");
    }
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return j_.at(key);
  }

  Section child(const std::string& key) { return Section(raw(key), field(key)); }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key) + ": unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

Orientation parse_orientation(const std::string& s, const std::string& field) {
  if (s == "consistent") return Orientation::Consistent;
  if (s == "paper") return Orientation::Paper;
  throw ConfigError(field + ": expected \"consistent\" or \"paper\"");
}

StSource parse_st_source(const std::string& s, const std::string& field) {
  if (s == "dacm") return StSource::Dacm;
  if (s == "frequency") return StSource::Frequency;
  if (s == "fused") return StSource::Fused;
  throw ConfigError(field + ": expected \"dacm\", \"frequency\" or \"fused\"");
}

std::string resolve(const std::string& base, const std::string& path) {
  if (path.empty()) return path;
  std::filesystem::path p(path);
  if (p.is_absolute()) return path;
  return (std::filesystem::path(base) / p).lexically_normal().string();
}

}  // namespace

std::string orientation_name(Orientation o) { return o == Orientation::Paper ? "paper" : "consistent"; }

std::string st_source_name(StSource s) {
  switch (s) {
    case StSource::Dacm: return "dacm";
    case StSource::Frequency: return "frequency";
    case StSource::Fused: return "fused";
  }
  return "fused";
}

DacmConfig RunConfig::dacm_config(std::size_t scene_cameras) const {
  if (model.num_cameras != 0 && model.num_cameras != scene_cameras) {
    throw ConfigError("model.num_cameras: " + std::to_string(model.num_cameras) + " but the scene has " +
                      std::to_string(scene_cameras) + " cameras");
  }
  DacmConfig c;
  c.num_cameras = scene_cameras;
  c.embed_dim = model.embed_dim;
  c.num_blocks = model.num_blocks;
  c.lambda = model.lambda;
  c.time_scale = model.time_scale;
  c.shared_classifier = model.shared_classifier;
  c.validate();
  return c;
}

TrainSchedule RunConfig::schedule() const {
  TrainSchedule s;
  s.epochs = train.epochs;
  s.pairs_per_epoch = train.pairs_per_epoch;
  s.batch_size = train.batch_size;
  s.lr = train.lr;
  s.decay_every = train.decay_every;
  s.decay_factor = train.decay_factor;
  s.seed = seed;
  s.heldout_pairs = train.heldout_pairs;
  return s;
}

RunConfig parse_config(const std::string& text, const std::string& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  c.base_dir = base_dir;
  Section top(j, "");
  top.read("seed", c.seed);

  if (top.has("scene")) {
    Section s = top.child("scene");
    if (s.has("generator")) {
      try {
        c.scene.generator = spec_from_json(s.raw("generator").dump());
      } catch (const ConfigError& e) {
        throw ConfigError("scene.generator: " + std::string(e.what()));
      }
    }
    if (s.has("ingest")) {
      Section in = s.child("ingest");
      in.read("path", c.scene.ingest_path);
      in.read("format", c.scene.ingest_format);
      in.finish();
      require(!c.scene.ingest_path.empty(), "scene.ingest.path", "must be set");
      require(c.scene.ingest_format == "csv", "scene.ingest.format", "only \"csv\" is supported");
      c.scene.ingest_path = resolve(base_dir, c.scene.ingest_path);
    }
    s.read("train_fraction", c.scene.train_fraction);
    s.finish();
    require(c.scene.generator.has_value() != !c.scene.ingest_path.empty(), "scene",
            "exactly one of \"generator\" or \"ingest\" is required");
    require(c.scene.train_fraction > 0.0 && c.scene.train_fraction < 1.0, "scene.train_fraction",
            "must lie strictly between 0 and 1");
  }

  if (top.has("model")) {
    Section s = top.child("model");
    s.read("num_cameras", c.model.num_cameras);
    s.read("embed_dim", c.model.embed_dim);
    s.read("num_blocks", c.model.num_blocks);
    s.read("lambda", c.model.lambda);
    s.read("time_scale", c.model.time_scale);
    s.read("shared_classifier", c.model.shared_classifier);
    s.finish();
    require(c.model.embed_dim >= 2 && c.model.embed_dim % 2 == 0, "model.embed_dim", "must be even and at least 2");
    require(c.model.lambda > 1.0, "model.lambda", "must exceed 1");
    require(c.model.time_scale > 0.0, "model.time_scale", "must be positive");
  }

  if (top.has("train")) {
    Section s = top.child("train");
    s.read("epochs", c.train.epochs);
    s.read("lr", c.train.lr);
    s.read("batch_size", c.train.batch_size);
    s.read("decay_every", c.train.decay_every);
    s.read("decay_factor", c.train.decay_factor);
    s.read("pairs_per_epoch", c.train.pairs_per_epoch);
    s.read("heldout_pairs", c.train.heldout_pairs);
    s.read("checkpoint", c.train.checkpoint);
    s.finish();
    require(c.train.lr > 0.0, "train.lr", "must be positive");
    require(c.train.batch_size >= 2, "train.batch_size", "must be at least 2 (batch norm)");
    require(c.train.decay_factor > 0.0 && c.train.decay_factor <= 1.0, "train.decay_factor", "must lie in (0,1]");
    c.train.checkpoint = resolve(base_dir, c.train.checkpoint);
    if (!c.train.checkpoint.empty()) {
      require(std::filesystem::exists(c.train.checkpoint), "train.checkpoint", "file not found: " + c.train.checkpoint);
    }
  }

  if (top.has("inference")) {
    Section s = top.child("inference");
    s.read("alpha", c.inference.alpha);
    s.read("beta", c.inference.beta);
    s.read("gamma0", c.inference.gamma0);
    s.read("gamma1", c.inference.gamma1);
    s.read("mu", c.inference.mu);
    s.read("bandwidth", c.inference.bandwidth);
    if (s.has("orientation")) {
      std::string o;
      s.read("orientation", o);
      c.inference.orientation = parse_orientation(o, "inference.orientation");
    }
    if (s.has("st_source")) {
      std::string o;
      s.read("st_source", o);
      c.inference.st_source = parse_st_source(o, "inference.st_source");
    }
    if (s.has("frequency")) {
      Section f = s.child("frequency");
      f.read("bin_width", c.frequency.bin_width);
      f.read("sigma_bins", c.frequency.sigma_bins);
      f.read("floor", c.frequency.floor);
      f.finish();
      require(c.frequency.bin_width >= 1, "inference.frequency.bin_width", "must be at least 1");
      require(c.frequency.sigma_bins >= 0.0, "inference.frequency.sigma_bins", "must be non-negative");
      require(c.frequency.floor >= 0.0, "inference.frequency.floor", "must be non-negative");
    }
    s.finish();
    require(c.inference.alpha > 0.0, "inference.alpha", "must be positive");
    require(c.inference.beta > 0.0, "inference.beta", "must be positive");
    require(c.inference.gamma0 > 0.0, "inference.gamma0", "must be positive");
    require(c.inference.gamma1 > 0.0, "inference.gamma1", "must be positive");
    require(c.inference.mu >= 0.0 && c.inference.mu <= 1.0, "inference.mu", "must lie in [0,1]");
  }

  if (top.has("simulate")) {
    Section s = top.child("simulate");
    if (s.has("strategies")) {
      const auto& arr = s.raw("strategies");
      require(arr.is_array(), "simulate.strategies", "expected an array of names");
      for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string field = "simulate.strategies[" + std::to_string(i) + "]";
        require(arr[i].is_string(), field, "expected a string");
        try {
          c.simulate.strategies.push_back(StrategySpec::parse(arr[i].get<std::string>()));
        } catch (const ConfigError& e) {
          throw ConfigError(field + ": " + e.what());
        }
      }
    }
    s.read("max_queries", c.simulate.max_queries);
    s.read("jitter", c.simulate.jitter);
    s.read("k_list", c.simulate.k_list);
    s.read("record_arrivals", c.simulate.record_arrivals);
    s.finish();
    require(c.simulate.jitter >= 0, "simulate.jitter", "must be non-negative");
    require(!c.simulate.k_list.empty(), "simulate.k_list", "must not be empty");
    for (std::size_t k : c.simulate.k_list) require(k >= 1, "simulate.k_list", "entries must be at least 1");
  }
  if (c.simulate.strategies.empty()) {
    for (const char* name : {"Pattern-C", "Pattern-CE", "OC", "OE", "OC+OE"}) {
      c.simulate.strategies.push_back(StrategySpec::parse(name));
    }
  }

  if (top.has("gradcheck")) {
    Section s = top.child("gradcheck");
    s.read("num_cameras", c.gradcheck.num_cameras);
    s.read("embed_dim", c.gradcheck.embed_dim);
    s.read("num_blocks", c.gradcheck.num_blocks);
    s.read("batch", c.gradcheck.batch);
    s.read("seeds", c.gradcheck.seeds);
    s.read("tolerance", c.gradcheck.tolerance);
    s.finish();
    require(c.gradcheck.num_cameras >= 1, "gradcheck.num_cameras", "must be at least 1");
    require(c.gradcheck.embed_dim >= 2 && c.gradcheck.embed_dim % 2 == 0, "gradcheck.embed_dim",
            "must be even and at least 2");
    require(c.gradcheck.batch >= 2, "gradcheck.batch", "must be at least 2 (batch norm)");
    require(!c.gradcheck.seeds.empty(), "gradcheck.seeds", "must not be empty");
    require(c.gradcheck.tolerance > 0.0, "gradcheck.tolerance", "must be positive");
  }

  if (top.has("output")) {
    Section s = top.child("output");
    s.read("dir", c.output_dir);
    s.finish();
    require(!c.output_dir.empty(), "output.dir", "must not be empty");
  }
  top.finish();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const auto base = std::filesystem::path(path).parent_path().string();
  return parse_config(ss.str(), base.empty() ? "." : base);
}

std::string config_to_json(const RunConfig& c) {
  json j;
  j["seed"] = c.seed;
  json scene;
  if (c.scene.generator) scene["generator"] = json::parse(spec_to_json(*c.scene.generator));
  if (!c.scene.ingest_path.empty()) scene["ingest"] = {{"path", c.scene.ingest_path}, {"format", c.scene.ingest_format}};
  scene["train_fraction"] = c.scene.train_fraction;
  j["scene"] = scene;
  j["model"] = {{"num_cameras", c.model.num_cameras}, {"embed_dim", c.model.embed_dim},
                {"num_blocks", c.model.num_blocks},   {"lambda", c.model.lambda},
                {"time_scale", c.model.time_scale},   {"shared_classifier", c.model.shared_classifier}};
  j["train"] = {{"epochs", c.train.epochs},
                {"lr", c.train.lr},
                {"batch_size", c.train.batch_size},
                {"decay_every", c.train.decay_every},
                {"decay_factor", c.train.decay_factor},
                {"pairs_per_epoch", c.train.pairs_per_epoch},
                {"heldout_pairs", c.train.heldout_pairs},
                {"checkpoint", c.train.checkpoint}};
  j["inference"] = {{"alpha", c.inference.alpha},
                    {"beta", c.inference.beta},
                    {"gamma0", c.inference.gamma0},
                    {"gamma1", c.inference.gamma1},
                    {"mu", c.inference.mu},
                    {"bandwidth", c.inference.bandwidth},
                    {"orientation", orientation_name(c.inference.orientation)},
                    {"st_source", st_source_name(c.inference.st_source)},
                    {"frequency",
                     {{"bin_width", c.frequency.bin_width},
                      {"sigma_bins", c.frequency.sigma_bins},
                      {"floor", c.frequency.floor}}}};
  json names = json::array();
  for (const auto& s : c.simulate.strategies) names.push_back(s.label());
  j["simulate"] = {{"strategies", names},
                   {"max_queries", c.simulate.max_queries},
                   {"jitter", c.simulate.jitter},
                   {"k_list", c.simulate.k_list},
                   {"record_arrivals", c.simulate.record_arrivals}};
  j["gradcheck"] = {{"num_cameras", c.gradcheck.num_cameras}, {"embed_dim", c.gradcheck.embed_dim},
                    {"num_blocks", c.gradcheck.num_blocks},   {"batch", c.gradcheck.batch},
                    {"seeds", c.gradcheck.seeds},             {"tolerance", c.gradcheck.tolerance}};
  j["output"] = {{"dir", c.output_dir}};
  return j.dump(2);
}

}  // namespace cereid
