#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "ear/data.hpp"

namespace ear {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::vector<char> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const fs::path& path, const char* data, std::size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(data, static_cast<std::streamsize>(size));
  if (!out) throw DataError("short write to " + path.string());
}

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big)
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  return v;
}

json parse_json(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return json::parse(bytes.begin(), bytes.end());
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
}

template <class T>
T field(const json& j, const char* key, const fs::path& path) {
  if (!j.contains(key)) throw FormatError(path.string() + ": missing field '" + key + "'", 0);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": field '" + key + "' has the wrong type", 0);
  }
}

const std::vector<std::string> kChannelOrder{"magnitude", "v_x", "v_y", "v_z"};

}  // namespace

void CineRecord::validate() const {
  const std::string name = subject_id + "/" + slice_id;
  if (image.dim() != 4 || image.size(0) != kRecordChannels)
    throw DimensionError(name + ": image must be [4,T,H,W], got " + shape_str(image.shape()));
  const Shape expected{frames(), height(), width()};
  if (mask.shape != expected)
    throw DimensionError(name + ": mask " + shape_str(mask.shape) + " does not match image frames " + shape_str(expected));
  for (std::int64_t i = 0; i < mask.numel(); ++i)
    if (mask[i] > 1) throw DimensionError(name + ": mask value " + std::to_string(mask[i]) + " at element " + std::to_string(i));
  for (double v : venc_cm_s)
    if (!(v > 0)) throw DimensionError(name + ": venc must be positive");
  const auto plane = frames() * height() * width();
  const auto& buf = image.buffer();
  for (std::int64_t ch = 0; ch < kRecordChannels; ++ch)
    for (std::int64_t i = 0; i < plane; ++i) {
      const double v = buf.get(static_cast<std::size_t>(ch * plane + i));
      if (!std::isfinite(v)) throw DimensionError(name + ": non-finite image value in channel " + std::to_string(ch));
      if (ch > 0 && std::abs(v) > venc_cm_s[static_cast<std::size_t>(ch - 1)])
        throw DimensionError(name + ": velocity " + std::to_string(v) + " exceeds venc in channel " + std::to_string(ch));
    }
  if (spacing_mm[0] <= 0 || spacing_mm[1] <= 0) throw DimensionError(name + ": spacing must be positive");
}

bool operator==(const CineRecord& a, const CineRecord& b) {
  return a.subject_id == b.subject_id && a.slice_id == b.slice_id && a.spacing_mm == b.spacing_mm &&
         a.venc_cm_s == b.venc_cm_s && a.mask == b.mask && a.image.shape() == b.image.shape() &&
         a.image.buffer() == b.image.buffer();
}

void save_record(const CineRecord& record, const fs::path& dir) {
  record.validate();
  fs::create_directories(dir);
  const json meta{{"format_version", kRecordFormatVersion},
                  {"subject_id", record.subject_id},
                  {"slice_id", record.slice_id},
                  {"dims", {kRecordChannels, record.frames(), record.height(), record.width()}},
                  {"dtype", "f32le"},
                  {"spacing_mm", record.spacing_mm},
                  {"venc_cm_s", record.venc_cm_s},
                  {"channel_order", kChannelOrder}};
  const auto text = meta.dump(2) + "\n";
  write_file(dir / "meta.json", text.data(), text.size());

  const Buffer pixels = record.image.buffer().converted(DType::f32);
  const auto values = pixels.view<float>();
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = to_little(std::bit_cast<std::uint32_t>(values[i]));
  write_file(dir / "image.raw", reinterpret_cast<const char*>(words.data()), words.size() * 4);
  write_file(dir / "mask.raw", reinterpret_cast<const char*>(record.mask.values.data()), record.mask.values.size());
}

CineRecord load_record(const fs::path& dir) {
  const auto meta_path = dir / "meta.json";
  const json meta = parse_json(meta_path);
  if (!meta.is_object()) throw FormatError(meta_path.string() + ": expected a JSON object", 0);
  const int version = field<int>(meta, "format_version", meta_path);
  if (version != kRecordFormatVersion)
    throw FormatError(meta_path.string() + ": unsupported format_version " + std::to_string(version), 0);
  const auto dtype = field<std::string>(meta, "dtype", meta_path);
  if (dtype != "f32le") throw FormatError(meta_path.string() + ": unsupported dtype '" + dtype + "'", 0);

  CineRecord rec;
  rec.subject_id = field<std::string>(meta, "subject_id", meta_path);
  rec.slice_id = field<std::string>(meta, "slice_id", meta_path);
  const auto dims = field<std::vector<std::int64_t>>(meta, "dims", meta_path);
  if (dims.size() != 4 || dims[0] != kRecordChannels || std::any_of(dims.begin(), dims.end(), [](auto d) { return d <= 0; }))
    throw DimensionError(meta_path.string() + ": dims must be [4,T,H,W] with positive extents, got " + shape_str(dims));
  rec.spacing_mm = field<std::array<double, 2>>(meta, "spacing_mm", meta_path);
  rec.venc_cm_s = field<std::array<double, 3>>(meta, "venc_cm_s", meta_path);
  if (meta.contains("channel_order") && field<std::vector<std::string>>(meta, "channel_order", meta_path) != kChannelOrder)
    throw DimensionError(meta_path.string() + ": unsupported channel_order");

  const auto numel = static_cast<std::size_t>(shape_numel(dims));
  const auto image_bytes = read_file(dir / "image.raw");
  if (image_bytes.size() != 4 * numel)
    throw FormatError((dir / "image.raw").string() + ": expected " + std::to_string(4 * numel) + " bytes for " +
                          shape_str(dims) + ", found " + std::to_string(image_bytes.size()),
                      std::min<std::uint64_t>(image_bytes.size(), 4 * numel));
  std::vector<float> pixels(numel);
  for (std::size_t i = 0; i < numel; ++i) {
    std::uint32_t w;
    std::memcpy(&w, image_bytes.data() + 4 * i, 4);
    pixels[i] = std::bit_cast<float>(to_little(w));
  }
  rec.image = Tensor::from_buffer(dims, Buffer(std::move(pixels)));

  const Shape mask_shape{dims[1], dims[2], dims[3]};
  const auto mask_bytes = read_file(dir / "mask.raw");
  const auto mask_numel = numel / kRecordChannels;
  if (mask_bytes.size() != mask_numel)
    throw FormatError((dir / "mask.raw").string() + ": expected " + std::to_string(mask_numel) + " bytes, found " +
                          std::to_string(mask_bytes.size()),
                      std::min<std::uint64_t>(mask_bytes.size(), mask_numel));
  std::vector<std::uint8_t> mask(mask_bytes.begin(), mask_bytes.end());
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i] > 1)
      throw DimensionError((dir / "mask.raw").string() + ": value " + std::to_string(mask[i]) + " at byte " +
                           std::to_string(i) + " is not 0/1");
  rec.mask = BinaryMask(mask_shape, std::move(mask));
  rec.validate();
  return rec;
}

// ---- manifest ----

std::vector<std::string> DatasetManifest::subjects() const {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.subject_id);
  return {s.begin(), s.end()};
}

void DatasetManifest::validate() const {
  std::set<std::string> paths;
  for (const auto& r : records) {
    if (r.subject_id.empty()) throw DataError("manifest: record '" + r.path + "' has an empty subject_id");
    if (!paths.insert(r.path).second) throw DataError("manifest: duplicate path '" + r.path + "'");
  }
}

DatasetManifest load_manifest(const fs::path& file) {
  const json j = parse_json(file);
  DatasetManifest m;
  m.root = file.parent_path();
  m.format_version = field<int>(j, "format_version", file);
  if (m.format_version != kRecordFormatVersion)
    throw FormatError(file.string() + ": unsupported format_version " + std::to_string(m.format_version), 0);
  for (const auto& r : field<json>(j, "records", file))
    m.records.push_back({field<std::string>(r, "subject_id", file), field<std::string>(r, "slice_id", file),
                         field<std::string>(r, "path", file)});
  m.validate();
  return m;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& file) {
  manifest.validate();
  json records = json::array();
  for (const auto& r : manifest.records)
    records.push_back({{"subject_id", r.subject_id}, {"slice_id", r.slice_id}, {"path", r.path}});
  const json j{{"format_version", manifest.format_version}, {"records", records}};
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  const auto text = j.dump(2) + "\n";
  write_file(file, text.data(), text.size());
}

DatasetManifest write_dataset(const std::vector<CineRecord>& records, const fs::path& dir) {
  DatasetManifest m;
  m.root = dir;
  for (const auto& rec : records) {
    const std::string rel = rec.subject_id + "_" + rec.slice_id;
    save_record(rec, dir / rel);
    m.records.push_back({rec.subject_id, rec.slice_id, rel});
  }
  save_manifest(m, dir / "manifest.json");
  return m;
}

// ---- RecordStore ----

RecordStore::RecordStore(DatasetManifest manifest) : manifest_(std::move(manifest)) { manifest_.validate(); }

RecordStore::RecordStore(std::vector<CineRecord> records) {
  for (std::size_t i = 0; i < records.size(); ++i) {
    manifest_.records.push_back({records[i].subject_id, records[i].slice_id, "#" + std::to_string(i)});
    cache_.emplace(i, std::move(records[i]));
  }
}

const CineRecord& RecordStore::get(std::size_t index) {
  const auto& e = manifest_.records.at(index);
  if (guarded_.count(e.subject_id))
    throw LeakageError("record '" + e.path + "' of held-out subject '" + e.subject_id + "' accessed during training");
  access_log_.push_back(index);
  if (auto it = cache_.find(index); it != cache_.end()) return it->second;
  CineRecord rec;
  try {
    rec = load_record(manifest_.root / e.path);
  } catch (const FormatError& err) {
    throw FormatError("record '" + e.path + "': " + err.what(), err.offset());
  } catch (const DimensionError& err) {
    throw DimensionError("record '" + e.path + "': " + err.what());
  } catch (const DataError& err) {
    throw DataError("record '" + e.path + "': " + err.what());
  }
  if (rec.subject_id != e.subject_id)
    throw DataError("record '" + e.path + "': subject '" + rec.subject_id + "' disagrees with manifest '" +
                    e.subject_id + "'");
  return cache_.emplace(index, std::move(rec)).first->second;
}

std::vector<std::size_t> RecordStore::indices_for(const std::set<std::string>& subjects) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest_.records.size(); ++i)
    if (subjects.count(manifest_.records[i].subject_id)) out.push_back(i);
  return out;
}

}  // namespace ear
