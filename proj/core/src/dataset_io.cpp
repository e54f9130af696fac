#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "confoundnet/data.hpp"
#include "confoundnet/error.hpp"

namespace confoundnet {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "raster IO assumes a little-endian host");

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  for (auto& f : fields) {
    const auto first = f.find_first_not_of(" \t\r");
    const auto last = f.find_last_not_of(" \t\r");
    f = first == std::string::npos ? std::string() : f.substr(first, last - first + 1);
  }
  return fields;
}

double parse_number(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size() || !std::isfinite(v)) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw IngestionError(where + ": '" + text + "' is not a finite number");
  }
}

// Whitespace-separated header token reader for the netpbm family.
class HeaderReader {
 public:
  explicit HeaderReader(std::istream& in) : in_(in) {}

  std::string token() {
    std::string tok;
    int ch;
    while ((ch = in_.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in_.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) return tok;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    return tok;
  }

 private:
  std::istream& in_;
};

}  // namespace

void write_raster(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 1) {
    throw DimensionError("raster images must be 1 x H x W, got " + shape_string(image.shape()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestionError("cannot write raster " + path.string());
  out << "Pd\n" << image.dim(2) << ' ' << image.dim(1) << "\n-1.0\n";
  out.write(reinterpret_cast<const char*>(image.data().data()),
            static_cast<std::streamsize>(image.size() * sizeof(double)));
  if (!out) throw IngestionError("short write to raster " + path.string());
}

Tensor read_raster(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open image " + path.string());
  HeaderReader header(in);
  const std::string magic = header.token();
  const std::string ws = header.token();
  const std::string hs = header.token();
  std::size_t width = 0, height = 0;
  try {
    width = std::stoul(ws);
    height = std::stoul(hs);
  } catch (const std::exception&) {
    throw IngestionError("image " + path.string() + " has a malformed header");
  }
  if (width == 0 || height == 0) throw IngestionError("image " + path.string() + " is empty");
  const std::string third = header.token();  // maxval or scale
  Tensor image(Shape{1, height, width});
  const std::size_t count = width * height;
  auto fail = [&] { throw IngestionError("image " + path.string() + " is truncated"); };

  if (magic == "Pd") {
    in.read(reinterpret_cast<char*>(image.data().data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(double))) fail();
  } else if (magic == "Pf") {
    const double scale = parse_number(third, path.string() + " scale");
    std::vector<float> raw(count);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float))) fail();
    if (scale > 0.0) {
      for (float& f : raw) f = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<std::uint32_t>(f)));
    }
    // PFM rows run bottom to top.
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        image[(height - 1 - r) * width + c] = static_cast<double>(raw[r * width + c]);
      }
    }
  } else if (magic == "P5") {
    const unsigned long maxval = std::stoul(third);
    if (maxval < 256) {
      std::vector<unsigned char> raw(count);
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(count));
      if (in.gcount() != static_cast<std::streamsize>(count)) fail();
      for (std::size_t i = 0; i < count; ++i) image[i] = raw[i];
    } else {
      std::vector<unsigned char> raw(2 * count);
      in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(2 * count));
      if (in.gcount() != static_cast<std::streamsize>(2 * count)) fail();
      for (std::size_t i = 0; i < count; ++i) image[i] = raw[2 * i] * 256.0 + raw[2 * i + 1];
    }
  } else if (magic == "P2") {
    for (std::size_t i = 0; i < count; ++i) {
      const std::string tok = header.token();
      if (tok.empty()) fail();
      image[i] = parse_number(tok, path.string());
    }
  } else {
    throw IngestionError("image " + path.string() + " has unsupported format '" + magic + "'");
  }
  image.check_finite_data("image " + path.string());
  return image;
}

void export_dataset(const Dataset& dataset, const fs::path& dir) {
  fs::create_directories(dir);
  {
    std::ofstream classes(dir / kClassesFile);
    for (const auto& name : dataset.class_names) classes << name << '\n';
    if (!classes) throw IngestionError("cannot write " + (dir / kClassesFile).string());
  }
  std::ofstream meta(dir / kMetadataFile);
  if (!meta) throw IngestionError("cannot write " + (dir / kMetadataFile).string());
  meta << "filename,class_name,azimuth_deg,nuisance_deg,split\n";
  std::set<std::string> used;
  for (std::size_t i = 0; i < dataset.chips.size(); ++i) {
    const Chip& chip = dataset.chips[i];
    std::string stem = chip.name.empty() ? "chip_" + std::to_string(i) : chip.name;
    if (!used.insert(stem).second) stem += "_" + std::to_string(i);
    const std::string filename = stem + ".pd";
    write_raster(dir / filename, chip.image);
    meta << filename << ',' << dataset.class_names.at(static_cast<std::size_t>(chip.class_label))
         << ',' << (chip.azimuth ? format_double(chip.azimuth->degrees()) : std::string()) << ','
         << format_double(chip.nuisance) << ',' << to_string(chip.split) << '\n';
  }
  if (!meta) throw IngestionError("short write to " + (dir / kMetadataFile).string());
}

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IngestionError("dataset directory " + dir.string() + " does not exist");
  const fs::path meta_path = dir / kMetadataFile;
  std::ifstream meta(meta_path);
  if (!meta) throw IngestionError("dataset " + dir.string() + " has no " + kMetadataFile);

  std::string line;
  if (!std::getline(meta, line)) throw IngestionError(meta_path.string() + " is empty");
  const std::vector<std::string> header = split_csv_line(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column[header[i]] = i;
  for (const char* required : {"filename", "class_name", "azimuth_deg", "nuisance_deg", "split"}) {
    if (!column.contains(required)) {
      throw IngestionError(meta_path.string() + " lacks column '" + required + "'");
    }
  }

  struct Row {
    std::size_t line;
    std::vector<std::string> fields;
  };
  std::vector<Row> rows;
  for (std::size_t line_no = 2; std::getline(meta, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      throw IngestionError(meta_path.string() + " line " + std::to_string(line_no) + ": expected " +
                           std::to_string(header.size()) + " fields, got " +
                           std::to_string(fields.size()));
    }
    rows.push_back({line_no, std::move(fields)});
  }
  if (rows.empty()) throw IngestionError(meta_path.string() + " lists no chips");

  Dataset ds;
  const fs::path classes_path = dir / kClassesFile;
  if (fs::exists(classes_path)) {
    std::ifstream classes(classes_path);
    std::string name;
    while (std::getline(classes, name)) {
      if (!name.empty() && name.back() == '\r') name.pop_back();
      if (!name.empty()) ds.class_names.push_back(name);
    }
  } else {
    std::set<std::string> names;
    for (const Row& r : rows) names.insert(r.fields[column["class_name"]]);
    ds.class_names.assign(names.begin(), names.end());
  }
  if (ds.class_names.size() < 2) throw IngestionError("dataset declares fewer than two classes");

  for (const Row& r : rows) {
    const std::string where = meta_path.string() + " line " + std::to_string(r.line);
    const std::string& file = r.fields[column["filename"]];
    const std::string& cls = r.fields[column["class_name"]];
    const auto it = std::find(ds.class_names.begin(), ds.class_names.end(), cls);
    if (it == ds.class_names.end()) {
      throw IngestionError(where + ": class '" + cls + "' is not in the declared class list");
    }
    const auto split = parse_split(r.fields[column["split"]]);
    if (!split) throw IngestionError(where + ": split must be 'train' or 'test'");

    Chip chip;
    try {
      chip.image = read_raster(dir / file);
    } catch (const Error& e) {
      throw IngestionError(where + " (" + file + "): " + e.what());
    }
    chip.class_label = static_cast<int>(it - ds.class_names.begin());
    const std::string& az = r.fields[column["azimuth_deg"]];
    if (!az.empty()) chip.azimuth = Azimuth::from_degrees(parse_number(az, where + " azimuth_deg"));
    const std::string& nu = r.fields[column["nuisance_deg"]];
    chip.nuisance = nu.empty() ? 0.0 : parse_number(nu, where + " nuisance_deg");
    chip.split = *split;
    chip.name = fs::path(file).stem().string();
    if (!ds.chips.empty() && chip.image.shape() != ds.chips.front().image.shape()) {
      throw IngestionError(where + ": image size " + shape_string(chip.image.shape()) +
                           " differs from " + shape_string(ds.chips.front().image.shape()));
    }
    ds.chips.push_back(std::move(chip));
  }
  return ds;
}

}  // namespace confoundnet
