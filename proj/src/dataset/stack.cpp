#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "ssr/dataset.hpp"
#include "ssr/errors.hpp"

namespace ssr::data {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "payloads are written as f32le");

std::vector<double> default_band_grid() {
    std::vector<double> grid(24);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 460.0 + 10.0 * static_cast<double>(i);
    return grid;
}

namespace {

void check_wavelengths(const std::vector<double>& wl) {
    if (wl.empty()) throw DataError("stack needs at least one band");
    for (std::size_t i = 0; i < wl.size(); ++i) {
        if (!std::isfinite(wl[i])) throw DataError("non-finite wavelength");
        if (i > 0 && !(wl[i] > wl[i - 1])) {
            throw DataError("wavelengths must be strictly increasing (" + std::to_string(wl[i - 1]) +
                            ", " + std::to_string(wl[i]) + ")");
        }
    }
}

float clamp255(float v) {
    if (!std::isfinite(v)) throw DataError("non-finite stack value");
    return std::clamp(v, 0.0f, 255.0f);
}

}  // namespace

SpectralStack::SpectralStack(std::size_t width, std::size_t height,
                             std::vector<double> wavelengths_nm)
    : width_(width), height_(height), wavelengths_(std::move(wavelengths_nm)) {
    check_wavelengths(wavelengths_);
    values_.assign(width_ * height_ * wavelengths_.size(), 0.0f);
}

SpectralStack::SpectralStack(std::size_t width, std::size_t height,
                             std::vector<double> wavelengths_nm, std::vector<float> values)
    : width_(width), height_(height), wavelengths_(std::move(wavelengths_nm)),
      values_(std::move(values)) {
    check_wavelengths(wavelengths_);
    if (values_.size() != width_ * height_ * wavelengths_.size()) {
        throw DataError("stack " + std::to_string(width_) + "x" + std::to_string(height_) + "x" +
                        std::to_string(wavelengths_.size()) + " needs " +
                        std::to_string(width_ * height_ * wavelengths_.size()) + " values, got " +
                        std::to_string(values_.size()));
    }
    for (float& v : values_) v = clamp255(v);
}

void SpectralStack::set(std::size_t c, std::size_t y, std::size_t x, float value) {
    values_[(c * height_ + y) * width_ + x] = clamp255(value);
}

std::span<const float> SpectralStack::band(std::size_t c) const {
    if (c >= channels()) throw DataError("band index out of range");
    return std::span<const float>(values_).subspan(c * pixels(), pixels());
}

DensityMap DensityMap::complement() const {
    DensityMap out{map};
    for (float& v : out.map.values) v = 1.0f - v;
    return out;
}

// ---- camera response ---------------------------------------------------------

void CameraResponse::normalize() {
    for (auto& row : rows) {
        if (row.size() != wavelengths_nm.size()) {
            throw DataError("camera response row has " + std::to_string(row.size()) +
                            " entries for " + std::to_string(wavelengths_nm.size()) + " bands");
        }
        double sum = 0.0;
        for (double w : row) {
            if (!(w >= 0.0) || !std::isfinite(w)) throw DataError("camera response must be >= 0");
            sum += w;
        }
        if (sum <= 0.0) throw DataError("camera response row sums to zero");
        for (double& w : row) w /= sum;
    }
}

CameraResponse default_camera_response(const std::vector<double>& wavelengths_nm) {
    CameraResponse h;
    h.wavelengths_nm = wavelengths_nm;
    h.source_note = "synthetic gaussian RGB response (610/540/465 nm)";
    const double centres[3] = {610.0, 540.0, 465.0};
    const double widths[3] = {40.0, 40.0, 35.0};
    for (int k = 0; k < 3; ++k) {
        h.rows[k].resize(wavelengths_nm.size());
        for (std::size_t c = 0; c < wavelengths_nm.size(); ++c) {
            const double d = (wavelengths_nm[c] - centres[k]) / widths[k];
            h.rows[k][c] = std::exp(-0.5 * d * d) + 1e-3;
        }
    }
    h.normalize();
    return h;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) {
        while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
        while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
        out.push_back(cell);
    }
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError("cannot parse " + what + " '" + s + "'");
    }
}

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
    std::ifstream in(path, mode);
    if (!in) throw DataError("cannot open " + path.string());
    return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
    std::ofstream out(path, mode | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    return out;
}

std::string fmt_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

CameraResponse load_camera_response_csv(const fs::path& path) {
    auto in = open_in(path);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        rows.push_back(split_csv_line(line));
    }
    if (rows.size() != 4) throw DataError(path.string() + ": expected header + 3 rows");
    CameraResponse h;
    h.source_note = path.filename().string();
    for (std::size_t c = 1; c < rows[0].size(); ++c) {
        h.wavelengths_nm.push_back(parse_double(rows[0][c], "wavelength"));
    }
    for (int k = 0; k < 3; ++k) {
        if (rows[k + 1].size() != rows[0].size()) {
            throw DataError(path.string() + ": row " + std::to_string(k + 1) + " has " +
                            std::to_string(rows[k + 1].size()) + " cells, header has " +
                            std::to_string(rows[0].size()));
        }
        for (std::size_t c = 1; c < rows[k + 1].size(); ++c) {
            h.rows[k].push_back(parse_double(rows[k + 1][c], "response"));
        }
    }
    h.normalize();
    return h;
}

void save_camera_response_csv(const CameraResponse& h, const fs::path& path) {
    auto out = open_out(path);
    out << "channel";
    for (double w : h.wavelengths_nm) out << ',' << fmt_double(w);
    out << '\n';
    const char* names[3] = {"R", "G", "B"};
    for (int k = 0; k < 3; ++k) {
        out << names[k];
        for (double w : h.rows[k]) out << ',' << fmt_double(w);
        out << '\n';
    }
}

// ---- spots -------------------------------------------------------------------

SpotSet::SpotSet(std::vector<Spot> spots, std::size_t width, std::size_t height)
    : spots_(std::move(spots)), width_(width), height_(height) {
    std::set<int> ids;
    for (const Spot& s : spots_) {
        if (!(s.u >= 0.0 && s.v >= 0.0 && s.u <= static_cast<double>(width_) - 1.0 &&
              s.v <= static_cast<double>(height_) - 1.0)) {
            throw DataError("spot " + std::to_string(s.id) + " at (" + fmt_double(s.u) + ", " +
                            fmt_double(s.v) + ") lies outside the " + std::to_string(width_) +
                            "x" + std::to_string(height_) + " image");
        }
        if (!ids.insert(s.id).second) {
            throw DataError("duplicate spot id " + std::to_string(s.id));
        }
    }
}

SpotSet load_spots_csv(const fs::path& path, std::size_t width, std::size_t height) {
    auto in = open_in(path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path.string() + ": empty spot file");
    const auto header = split_csv_line(line);
    if (header != std::vector<std::string>{"id", "u", "v", "wavelength_nm"}) {
        throw DataError(path.string() + ": expected header id,u,v,wavelength_nm");
    }
    std::vector<Spot> spots;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 4) throw DataError(path.string() + ": malformed row '" + line + "'");
        Spot s;
        s.id = static_cast<int>(parse_double(cells[0], "spot id"));
        s.u = parse_double(cells[1], "u");
        s.v = parse_double(cells[2], "v");
        s.wavelength_nm = parse_double(cells[3], "wavelength_nm");
        spots.push_back(s);
    }
    return SpotSet(std::move(spots), width, height);
}

void save_spots_csv(const SpotSet& spots, const fs::path& path) {
    auto out = open_out(path);
    out << "id,u,v,wavelength_nm\n";
    for (const Spot& s : spots.spots()) {
        out << s.id << ',' << fmt_double(s.u) << ',' << fmt_double(s.v) << ','
            << fmt_double(s.wavelength_nm) << '\n';
    }
}

// ---- stack files -------------------------------------------------------------

namespace {

fs::path payload_path_for(const fs::path& header_path) {
    fs::path p = header_path;
    p.replace_extension(".raw");
    return p;
}

void write_container(const fs::path& header_path, std::size_t width, std::size_t height,
                     const std::vector<double>& wavelengths, std::span<const float> values,
                     const char* kind) {
    const fs::path payload = payload_path_for(header_path);
    json header;
    header["kind"] = kind;
    header["width"] = width;
    header["height"] = height;
    header["channels"] = wavelengths.size();
    header["wavelengths_nm"] = wavelengths;
    header["dtype"] = "f32le";
    header["order"] = "band-sequential";
    header["payload"] = payload.filename().string();
    {
        auto out = open_out(header_path);
        out << header.dump(2) << '\n';
    }
    auto out = open_out(payload, std::ios::out | std::ios::binary);
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!out) throw DataError("short write to " + payload.string());
}

struct Container {
    std::size_t width = 0, height = 0;
    std::vector<double> wavelengths;
    std::vector<float> values;
};

Container read_container(const fs::path& header_path) {
    json header;
    try {
        auto in = open_in(header_path);
        header = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(header_path.string() + ": invalid header JSON: " + e.what());
    }
    Container c;
    fs::path payload;
    try {
        c.width = header.at("width").get<std::size_t>();
        c.height = header.at("height").get<std::size_t>();
        const auto channels = header.at("channels").get<std::size_t>();
        c.wavelengths = header.at("wavelengths_nm").get<std::vector<double>>();
        if (header.at("dtype").get<std::string>() != "f32le") throw DataError("dtype must be f32le");
        if (header.at("order").get<std::string>() != "band-sequential") {
            throw DataError("order must be band-sequential");
        }
        if (channels != c.wavelengths.size()) {
            throw DataError("header channels=" + std::to_string(channels) + " but " +
                            std::to_string(c.wavelengths.size()) + " wavelengths listed");
        }
        payload = header_path.parent_path() / header.at("payload").get<std::string>();
    } catch (const json::exception& e) {
        throw DataError(header_path.string() + ": bad header: " + e.what());
    }
    check_wavelengths(c.wavelengths);
    const std::size_t expected = c.width * c.height * c.wavelengths.size();
    std::error_code ec;
    const auto bytes = fs::file_size(payload, ec);
    if (ec) throw DataError("cannot stat payload " + payload.string());
    if (bytes != expected * sizeof(float)) {
        throw DataError(payload.string() + ": payload is " + std::to_string(bytes) +
                        " bytes, header implies " + std::to_string(expected * sizeof(float)));
    }
    c.values.resize(expected);
    auto in = open_in(payload, std::ios::in | std::ios::binary);
    in.read(reinterpret_cast<char*>(c.values.data()),
            static_cast<std::streamsize>(expected * sizeof(float)));
    if (!in) throw DataError("short read from " + payload.string());
    return c;
}

}  // namespace

void save_stack(const SpectralStack& stack, const fs::path& header_path) {
    write_container(header_path, stack.width(), stack.height(), stack.wavelengths_nm(),
                    stack.values(), "stack");
}

SpectralStack load_stack(const fs::path& header_path) {
    Container c = read_container(header_path);
    for (float v : c.values) {
        if (!std::isfinite(v)) throw DataError(header_path.string() + ": non-finite payload value");
    }
    return SpectralStack(c.width, c.height, std::move(c.wavelengths), std::move(c.values));
}

void save_map(const ScalarMap& map, const fs::path& header_path) {
    if (map.values.size() != map.width * map.height) throw DataError("map size mismatch");
    write_container(header_path, map.width, map.height, {0.0}, map.values, "map");
}

ScalarMap load_map(const fs::path& header_path) {
    Container c = read_container(header_path);
    if (c.wavelengths.size() != 1) throw DataError(header_path.string() + ": map must be 1 channel");
    ScalarMap m;
    m.width = c.width;
    m.height = c.height;
    m.values = std::move(c.values);
    return m;
}

}  // namespace ssr::data
