// Model container:
//   "VMDL" | u8 version (=1) | u32 LE header length | JSON header |
//   u32 LE tensor count | that many VTEN v1 records, in parameters() order.

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "vidattack/models.hpp"
#include "vidattack/vten.hpp"

namespace vidattack {

namespace {

constexpr char kMagic[4] = {'V', 'M', 'D', 'L'};
constexpr std::uint8_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (in.gcount() != 4) throw FormatError("model container: truncated");
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) | (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

}  // namespace

void save_model(const std::filesystem::path& path, const ThreatModel& model) {
  const auto& d = model.dims();
  nlohmann::ordered_json header;
  header["format"] = "vidattack-model";
  header["head_kind"] = std::string(head_kind_name(model.head_kind()));
  header["width"] = d.width;
  header["height"] = d.height;
  header["channels"] = d.channels;
  header["encoder_dim"] = d.encoder_dim;
  header["hidden_dim"] = d.hidden_dim;
  header["num_classes"] = d.num_classes;
  auto params = model.parameters();
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : params) header["tensors"].push_back(name);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(kMagic, 4);
  out.put(static_cast<char>(kVersion));
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) write_vten(out, *t);
  if (!out) throw FormatError("model container: write failed for " + path.string());
}

ThreatModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open model " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4) throw FormatError("model container: truncated");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("model container: bad magic in " + path.string());
  const int version = in.get();
  if (version == EOF) throw FormatError("model container: truncated");
  if (version != kVersion) throw UnsupportedVersionError("model container: unsupported version " + std::to_string(version));
  const std::uint32_t len = get_u32(in);
  std::string text(len, '\0');
  in.read(text.data(), len);
  if (static_cast<std::uint32_t>(in.gcount()) != len) throw FormatError("model container: truncated header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model container: bad header: ") + e.what());
  }
  ModelDims dims;
  HeadKind kind;
  std::vector<std::string> names;
  try {
    kind = parse_head_kind(header.at("head_kind").get<std::string>());
    dims.width = header.at("width").get<std::size_t>();
    dims.height = header.at("height").get<std::size_t>();
    dims.channels = header.at("channels").get<std::size_t>();
    dims.encoder_dim = header.at("encoder_dim").get<std::size_t>();
    dims.hidden_dim = header.at("hidden_dim").get<std::size_t>();
    dims.num_classes = header.at("num_classes").get<std::size_t>();
    names = header.at("tensors").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model container: incomplete header: ") + e.what());
  }

  ThreatModel model = ThreatModel::create(kind, dims, 0);
  auto params = model.parameters();
  const std::uint32_t count = get_u32(in);
  if (count != params.size() || names.size() != params.size()) {
    throw FormatError("model container: expected " + std::to_string(params.size()) + " tensors");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (names[i] != params[i].first) throw FormatError("model container: unexpected tensor '" + names[i] + "'");
    Tensor t = read_vten(in);
    if (t.shape() != params[i].second->shape()) {
      throw FormatError("model container: tensor '" + names[i] + "' has shape " + shape_str(t.shape()));
    }
    *params[i].second = std::move(t);
  }
  return model;
}

}  // namespace vidattack
