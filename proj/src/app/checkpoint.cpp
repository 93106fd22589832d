#include "ear/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace ear {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'A', 'R', 'C', 'K', 'P', 'T', '1'};

void append_buffer(std::string& payload, const Buffer& b) {
  static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");
  visit_dtype(b.dtype(), [&]<class T>(T) {
    const auto v = b.view<T>();
    payload.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(T));
  });
}

Buffer read_buffer(const std::string& payload, std::uint64_t offset, DType dtype, std::size_t count,
                   std::uint64_t base) {
  Buffer b(dtype, count);
  visit_dtype(dtype, [&]<class T>(T) {
    const auto bytes = count * sizeof(T);
    if (offset + bytes > payload.size())
      throw FormatError("checkpoint payload too short for tensor at offset " + std::to_string(offset), base + payload.size());
    std::memcpy(b.view<T>().data(), payload.data() + offset, bytes);
  });
  return b;
}

}  // namespace

void save_checkpoint(const fs::path& file, const Checkpoint& meta, Network& net, const Adam& optimizer) {
  std::string payload;
  json tensors = json::array();
  const auto add = [&](const std::string& name, const Shape& shape, const Buffer& b) {
    tensors.push_back({{"name", name}, {"shape", shape}, {"dtype", dtype_name(b.dtype())}, {"offset", payload.size()}});
    append_buffer(payload, b);
  };
  net.visit_parameters([&](const std::string& name, Tensor& t) { add("param/" + name, t.shape(), t.buffer()); });
  for (const auto& [name, st] : optimizer.state()) {
    const Shape shape{static_cast<std::int64_t>(st.m.size())};
    add("adam_m/" + name, shape, st.m);
    add("adam_v/" + name, shape, st.v);
  }
  json header{{"format_version", kCheckpointFormatVersion},
              {"model", to_json(net.config())},
              {"dtype", dtype_name(net.dtype())},
              {"run", to_json(meta.run)},
              {"fold", meta.fold},
              {"epoch", meta.epoch},
              {"rng_state", meta.rng_state},
              {"best_score", meta.best_score ? json(*meta.best_score) : json(nullptr)},
              {"best_epoch", meta.best_epoch},
              {"adam_steps", optimizer.steps()},
              {"extra", meta.extra},
              {"tensors", tensors}};
  const auto text = header.dump();
  const std::uint64_t len = text.size();
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const auto tmp = fs::path(file.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw DataError("short write to checkpoint " + tmp.string());
  }
  fs::rename(tmp, file);
}

LoadedCheckpoint load_checkpoint(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + file.string());
  const std::string bytes(std::istreambuf_iterator<char>(in), {});
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
    throw FormatError(file.string() + ": not a checkpoint (bad magic)", 0);
  std::uint64_t len;
  std::memcpy(&len, bytes.data() + 8, 8);
  if (16 + len > bytes.size()) throw FormatError(file.string() + ": header length exceeds file size", 8);
  json header;
  try {
    header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::parse_error& e) {
    throw FormatError(file.string() + ": bad header: " + e.what(), 16 + e.byte);
  }
  const std::string payload = bytes.substr(16 + len);
  const std::uint64_t base = 16 + len;
  try {
    if (header.at("format_version").get<int>() != kCheckpointFormatVersion)
      throw FormatError(file.string() + ": unsupported checkpoint version", 16);
    Checkpoint meta;
    meta.run = run_config_from_json(header.at("run"));
    meta.fold = header.at("fold").get<int>();
    meta.epoch = header.at("epoch").get<int>();
    meta.rng_state = header.at("rng_state").get<std::string>();
    if (!header.at("best_score").is_null()) meta.best_score = header.at("best_score").get<double>();
    meta.best_epoch = header.at("best_epoch").get<int>();
    meta.extra = header.at("extra");

    const EarConfig model = ear_config_from_json(header.at("model"));
    const DType dtype = parse_dtype(header.at("dtype").get<std::string>());
    Network net(model, dtype);

    std::map<std::string, Buffer> stored;
    std::map<std::string, Shape> shapes;
    for (const auto& t : header.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      const Shape shape = t.at("shape").get<Shape>();
      stored[name] = read_buffer(payload, t.at("offset").get<std::uint64_t>(), parse_dtype(t.at("dtype").get<std::string>()),
                                 static_cast<std::size_t>(shape_numel(shape)), base);
      shapes[name] = shape;
    }
    net.visit_parameters([&](const std::string& name, Tensor& p) {
      const auto it = stored.find("param/" + name);
      if (it == stored.end()) throw ConfigError(file.string() + ": missing parameter " + name);
      if (shapes["param/" + name] != p.shape())
        throw ConfigError(file.string() + ": parameter " + name + " has shape " + shape_str(shapes["param/" + name]) +
                          ", model expects " + shape_str(p.shape()));
      p = Tensor::from_buffer(p.shape(), it->second.converted(dtype));
      p.set_requires_grad(true);
    });
    std::map<std::string, Adam::Moments> moments;
    for (auto& [name, buf] : stored) {
      if (name.rfind("adam_m/", 0) == 0) moments[name.substr(7)].m = buf;
      if (name.rfind("adam_v/", 0) == 0) moments[name.substr(7)].v = buf;
    }
    Adam opt(meta.run.optimizer);
    opt.restore(header.at("adam_steps").get<std::int64_t>(), std::move(moments));
    return {std::move(meta), std::move(net), std::move(opt)};
  } catch (const json::exception& e) {
    throw FormatError(file.string() + ": malformed header: " + e.what(), 16);
  }
}

}  // namespace ear
