#include "cereid/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cereid/error.hpp"

namespace cereid {
namespace {

using nlohmann::json;

json tensor_json(const Tensor& t) { return json{{"shape", t.shape()}, {"data", t.data()}}; }

Tensor tensor_from(const json& j, const Shape& expected, const std::string& what) {
  Shape shape = j.at("shape").get<Shape>();
  if (shape != expected) {
    throw CheckpointError("checkpoint: '" + what + "' has shape " + shape_string(shape) + ", expected " +
                          shape_string(expected));
  }
  std::vector<double> data;
  for (const auto& v : j.at("data")) {
    if (!v.is_number()) throw CheckpointError("checkpoint: non-numeric value in '" + what + "'");
    data.push_back(v.get<double>());
  }
  if (data.size() != shape_size(shape)) throw CheckpointError("checkpoint: '" + what + "' has wrong element count");
  return Tensor(std::move(shape), std::move(data));
}

json config_json(const DacmConfig& c) {
  return json{{"num_cameras", c.num_cameras}, {"embed_dim", c.embed_dim},   {"num_blocks", c.num_blocks},
              {"lambda", c.lambda},           {"time_scale", c.time_scale}, {"den_floor", c.den_floor},
              {"shared_classifier", c.shared_classifier}, {"ln_eps", c.ln_eps}, {"bn_eps", c.bn_eps},
              {"bn_momentum", c.bn_momentum}};
}

DacmConfig config_from(const json& j) {
  DacmConfig c;
  c.num_cameras = j.at("num_cameras").get<std::size_t>();
  c.embed_dim = j.at("embed_dim").get<std::size_t>();
  c.num_blocks = j.at("num_blocks").get<std::size_t>();
  c.lambda = j.at("lambda").get<double>();
  c.time_scale = j.at("time_scale").get<double>();
  c.den_floor = j.at("den_floor").get<double>();
  c.shared_classifier = j.at("shared_classifier").get<bool>();
  c.ln_eps = j.at("ln_eps").get<double>();
  c.bn_eps = j.at("bn_eps").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  return c;
}

}  // namespace

std::string checkpoint_to_string(const DacmModel& model, const TrainingMeta& meta) {
  json params = json::array();
  for (const Param* p : model.params()) {
    params.push_back({{"name", p->name},
                      {"value", tensor_json(p->value)},
                      {"adam_m", tensor_json(p->adam_m)},
                      {"adam_v", tensor_json(p->adam_v)},
                      {"step_count", p->step_count}});
  }
  json doc{{"format", "dacm-checkpoint"},
           {"format_version", kCheckpointFormatVersion},
           {"config", config_json(model.config)},
           {"parameters", params},
           {"batch_norm",
            {{"running_mean", tensor_json(model.bn_stats.running_mean)},
             {"running_var", tensor_json(model.bn_stats.running_var)}}},
           {"training", {{"epochs_run", meta.epochs_run}, {"final_loss", meta.final_loss}, {"seed", meta.seed}}}};
  return doc.dump(1) + "\n";
}

Checkpoint checkpoint_from_string(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint is corrupt or truncated: ") + e.what());
  }
  try {
    if (doc.value("format", std::string{}) != "dacm-checkpoint") throw CheckpointError("checkpoint: missing format tag");
    const int version = doc.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw CheckpointError("checkpoint: unsupported format_version " + std::to_string(version));
    }
    const DacmConfig config = config_from(doc.at("config"));
    try {
      config.validate();
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
    }
    Checkpoint ck;
    ck.model = DacmModel::zeros(config);
    const auto& entries = doc.at("parameters");
    auto params = ck.model.params();
    if (entries.size() != params.size()) {
      throw CheckpointError("checkpoint: expected " + std::to_string(params.size()) + " parameters, found " +
                            std::to_string(entries.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& e = entries[i];
      Param& p = *params[i];
      if (e.at("name").get<std::string>() != p.name) {
        throw CheckpointError("checkpoint: parameter " + std::to_string(i) + " is '" + e.at("name").get<std::string>() +
                              "', expected '" + p.name + "'");
      }
      p.value = tensor_from(e.at("value"), p.value.shape(), p.name);
      p.adam_m = tensor_from(e.at("adam_m"), p.value.shape(), p.name + ".adam_m");
      p.adam_v = tensor_from(e.at("adam_v"), p.value.shape(), p.name + ".adam_v");
      p.step_count = e.at("step_count").get<std::size_t>();
    }
    const auto& bn = doc.at("batch_norm");
    ck.model.bn_stats.running_mean = tensor_from(bn.at("running_mean"), ck.model.bn_stats.running_mean.shape(), "running_mean");
    ck.model.bn_stats.running_var = tensor_from(bn.at("running_var"), ck.model.bn_stats.running_var.shape(), "running_var");
    const auto& tr = doc.at("training");
    ck.meta.epochs_run = tr.at("epochs_run").get<std::size_t>();
    ck.meta.final_loss = tr.at("final_loss").is_number() ? tr.at("final_loss").get<double>() : 0.0;
    ck.meta.seed = tr.at("seed").get<std::uint64_t>();
    return ck;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint is malformed: ") + e.what());
  }
}

void save_checkpoint(const DacmModel& model, const TrainingMeta& meta, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path + "' for writing");
  out << checkpoint_to_string(model, meta);
  if (!out) throw InputError("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_string(ss.str());
}

void require_camera_count(const DacmModel& model, std::size_t num_cameras) {
  if (model.num_cameras() != num_cameras) {
    throw CheckpointError("checkpoint was trained for " + std::to_string(model.num_cameras()) +
                          " cameras but the scene has " + std::to_string(num_cameras));
  }
}

}  // namespace cereid
