#include "kpl/model_io.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"
#include "kpl/error.hpp"

namespace kpl::io {

namespace {

using nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m) {
  json data = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  }
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

json vector_to_json(const Eigen::VectorXd& v) {
  return json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& data = j.at("data");
  if (rows < 0 || cols < 0 || !data.is_array() ||
      data.size() != static_cast<std::size_t>(rows * cols)) {
    throw InputError(what + ": matrix payload does not match its shape");
  }
  Eigen::MatrixXd m(rows, cols);
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[i++].get<double>();
  }
  return m;
}

Eigen::VectorXd vector_from_json(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

json header(ModelKind kind) {
  return {{"format", kModelFormat}, {"version", kModelVersion}, {"kind", to_string(kind)}};
}

json parse_document(const std::string& text, const std::string& source, ModelKind expected) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(source + ": corrupt model file (" + e.what() + ")");
  }
  if (!doc.is_object() || doc.value("format", "") != kModelFormat) {
    throw InputError(source + ": not a " + std::string(kModelFormat) + " document");
  }
  const int version = doc.value("version", -1);
  if (version != kModelVersion) {
    throw InputError(source + ": unsupported model version " + std::to_string(version) +
                     " (expected " + std::to_string(kModelVersion) + ")");
  }
  const auto kind = doc.value("kind", "");
  if (kind != to_string(expected)) {
    throw InputError(source + ": model kind '" + kind + "', expected '" + to_string(expected) +
                     "'");
  }
  return doc;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open model file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
  if (!out) throw InputError("failed writing " + path.string());
}

}  // namespace

std::string to_string(ModelKind kind) { return kind == ModelKind::koopman ? "koopman" : "dmdc"; }

std::string serialize(const koopman::KoopmanModel& model) {
  model.validate();
  json doc = header(ModelKind::koopman);
  doc["dims"] = {{"n_x", model.n_x()},
                 {"d", model.d()},
                 {"m", model.m()},
                 {"n_followers", model.n_followers}};
  doc["dt"] = model.dt;
  doc["scales"] = {{"state", vector_to_json(model.scales.state)},
                   {"control", model.scales.control}};
  json layers = json::array();
  for (const auto& l : model.encoder.layers()) {
    layers.push_back({{"weights", matrix_to_json(l.weights)}, {"bias", vector_to_json(l.bias)}});
  }
  doc["encoder"] = {{"activation", koopman::to_string(model.encoder.activation())},
                    {"hidden", model.encoder.hidden()},
                    {"layers", std::move(layers)}};
  doc["A"] = matrix_to_json(model.op.A);
  doc["B"] = matrix_to_json(model.op.B);
  return doc.dump(1) + "\n";
}

std::string serialize(const DmdcArtifact& art) {
  json doc = header(ModelKind::dmdc);
  const auto n_x = art.model.A.rows();
  doc["dims"] = {{"n_x", n_x}, {"n_followers", art.n_followers}};
  doc["dt"] = art.dt;
  doc["rank_used"] = art.model.rank_used;
  doc["A"] = matrix_to_json(art.model.A);
  doc["B"] = matrix_to_json(art.model.B);
  return doc.dump(1) + "\n";
}

koopman::KoopmanModel parse_koopman(const std::string& text, const std::string& source) {
  const json doc = parse_document(text, source, ModelKind::koopman);
  try {
    const auto& dims = doc.at("dims");
    const int n_x = dims.at("n_x").get<int>();
    const int d = dims.at("d").get<int>();
    const auto& enc = doc.at("encoder");
    koopman::KoopmanModel model;
    model.encoder = koopman::Encoder(n_x, enc.at("hidden").get<std::vector<int>>(), d,
                                     koopman::activation_from_string(enc.at("activation")));
    const auto& layers = enc.at("layers");
    if (layers.size() != model.encoder.layers().size()) {
      throw InputError(source + ": encoder layer count mismatch");
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      auto& dst = model.encoder.layers()[l];
      dst.weights = matrix_from_json(layers[l].at("weights"), source);
      dst.bias = vector_from_json(layers[l].at("bias"));
    }
    model.op.A = matrix_from_json(doc.at("A"), source);
    model.op.B = matrix_from_json(doc.at("B"), source).reshaped();
    model.scales.state = vector_from_json(doc.at("scales").at("state"));
    model.scales.control = doc.at("scales").at("control").get<double>();
    model.n_followers = dims.at("n_followers").get<int>();
    model.dt = doc.at("dt").get<double>();
    if (dims.at("m").get<int>() != model.m()) throw InputError(source + ": inconsistent dims.m");
    model.validate();
    return model;
  } catch (const json::exception& e) {
    throw InputError(source + ": malformed model file (" + e.what() + ")");
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
}

DmdcArtifact parse_dmdc(const std::string& text, const std::string& source) {
  const json doc = parse_document(text, source, ModelKind::dmdc);
  try {
    DmdcArtifact art;
    art.model.A = matrix_from_json(doc.at("A"), source);
    art.model.B = matrix_from_json(doc.at("B"), source).reshaped();
    art.model.rank_used = doc.at("rank_used").get<int>();
    art.n_followers = doc.at("dims").at("n_followers").get<int>();
    art.dt = doc.at("dt").get<double>();
    if (art.model.A.rows() != art.model.A.cols() || art.model.B.size() != art.model.A.rows()) {
      throw InputError("A/B shape mismatch");
    }
    if (doc.at("dims").at("n_x").get<Eigen::Index>() != art.model.A.rows()) {
      throw InputError("inconsistent dims.n_x");
    }
    return art;
  } catch (const json::exception& e) {
    throw InputError(source + ": malformed model file (" + e.what() + ")");
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
}

void save_model(const koopman::KoopmanModel& model, const std::filesystem::path& path) {
  write_file(path, serialize(model));
}

void save_model(const DmdcArtifact& model, const std::filesystem::path& path) {
  write_file(path, serialize(model));
}

koopman::KoopmanModel load_model(const std::filesystem::path& path) {
  return parse_koopman(read_file(path), path.string());
}

DmdcArtifact load_dmdc(const std::filesystem::path& path) {
  return parse_dmdc(read_file(path), path.string());
}

ModelKind peek_kind(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": corrupt model file (" + e.what() + ")");
  }
  const auto kind = doc.is_object() ? doc.value("kind", "") : "";
  if (kind == "koopman") return ModelKind::koopman;
  if (kind == "dmdc") return ModelKind::dmdc;
  throw InputError(path.string() + ": unknown model kind '" + kind + "'");
}

}  // namespace kpl::io
