#include "eit/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

#include "eit/errors.hpp"

namespace eit {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "binary containers assume a little-endian host");

json geometry_json(const TankGeometry& g) {
    return {{"probe_radius", g.probe_radius},     {"probe_height", g.probe_height},
            {"tank_radius", g.tank_radius},       {"tank_height", g.tank_height},
            {"layers", g.layers},                 {"electrodes_per_layer", g.electrodes_per_layer},
            {"electrode_arc", g.electrode_arc},   {"electrode_height", g.electrode_height},
            {"layer_pitch", g.layer_pitch}};
}

TankGeometry geometry_from(const json& j) {
    TankGeometry g;
    g.probe_radius = j.at("probe_radius");
    g.probe_height = j.at("probe_height");
    g.tank_radius = j.at("tank_radius");
    g.tank_height = j.at("tank_height");
    g.layers = j.at("layers");
    g.electrodes_per_layer = j.at("electrodes_per_layer");
    g.electrode_arc = j.at("electrode_arc");
    g.electrode_height = j.at("electrode_height");
    g.layer_pitch = j.at("layer_pitch");
    return g;
}

template <class F>
auto wrap_json(const char* what, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw FormatError(std::string(what) + ": " + e.what());
    }
}

std::ifstream open_in(const std::filesystem::path& path, bool binary) {
    std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
    if (!is) throw FormatError("cannot open " + path.string());
    return is;
}

std::ofstream open_out(const std::filesystem::path& path, bool binary) {
    std::ofstream os(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!os) throw FormatError("cannot write " + path.string());
    return os;
}

}  // namespace

std::string read_text(const std::filesystem::path& path) {
    auto is = open_in(path, false);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    auto os = open_out(path, false);
    os << text;
    if (!os) throw FormatError("write failed: " + path.string());
}

std::string mesh_to_json(const Mesh& mesh) {
    json j;
    j["format"] = "eit-mesh";
    j["version"] = 1;
    j["geometry"] = geometry_json(mesh.geometry);
    json nodes = json::array();
    for (const auto& p : mesh.nodes) nodes.push_back({p.x(), p.y(), p.z()});
    j["nodes"] = std::move(nodes);
    j["tets"] = mesh.tets;
    j["electrodes"] = mesh.electrodes;
    j["outer_faces"] = mesh.outer_faces;
    j["id"] = mesh.id();
    return j.dump();
}

Mesh mesh_from_json(const std::string& text) {
    return wrap_json("mesh file", [&] {
        const json j = json::parse(text);
        if (j.value("format", "") != "eit-mesh") throw FormatError("not a mesh file");
        Mesh m;
        m.geometry = geometry_from(j.at("geometry"));
        for (const auto& p : j.at("nodes")) m.nodes.emplace_back(p.at(0), p.at(1), p.at(2));
        m.tets = j.at("tets").get<std::vector<Tet>>();
        m.electrodes = j.at("electrodes").get<std::vector<std::vector<Face>>>();
        m.outer_faces = j.at("outer_faces").get<std::vector<Face>>();
        const auto n = int(m.nodes.size());
        for (const auto& t : m.tets)
            for (int v : t)
                if (v < 0 || v >= n) throw FormatError("mesh file: tet references a missing node");
        if (j.contains("id") && j.at("id").get<std::uint64_t>() != m.id())
            throw FormatError("mesh file: content does not match the stored id");
        return m;
    });
}

void save_mesh(const Mesh& mesh, const std::filesystem::path& path) { write_text(path, mesh_to_json(mesh)); }

Mesh load_mesh(const std::filesystem::path& path) { return mesh_from_json(read_text(path)); }

std::string target_to_json(const TargetSpec& t) {
    json j;
    j["center"] = {t.center.x(), t.center.y(), t.center.z()};
    j["semi_axes"] = {t.semi_axes.x(), t.semi_axes.y(), t.semi_axes.z()};
    json rot = json::array();
    for (int r = 0; r < 3; ++r) rot.push_back({t.rotation(r, 0), t.rotation(r, 1), t.rotation(r, 2)});
    j["rotation"] = rot;
    j["sigma_in"] = t.sigma_in;
    j["sigma_bg"] = t.sigma_bg;
    return j.dump(2);
}

TargetSpec target_from_json(const std::string& text) {
    return wrap_json("target", [&] {
        const json j = json::parse(text);
        TargetSpec t;
        for (int a = 0; a < 3; ++a) {
            t.center[a] = j.at("center").at(a);
            t.semi_axes[a] = j.at("semi_axes").at(a);
            for (int b = 0; b < 3; ++b) t.rotation(a, b) = j.at("rotation").at(a).at(b);
        }
        t.sigma_in = j.at("sigma_in");
        t.sigma_bg = j.at("sigma_bg");
        if ((t.semi_axes.array() <= 0).any()) throw FormatError("target: semi-axes must be positive");
        return t;
    });
}

void write_frame_csv(std::ostream& os, const VoltageFrame& frame, const MeasurementSchedule& schedule) {
    const auto rows = schedule.retained();
    if (std::size_t(frame.values.size()) != rows.size()) throw DimensionError("frame length does not match the schedule");
    if (frame.schedule_id != 0 && frame.schedule_id != schedule.id())
        throw ProvenanceError("frame was produced with a different schedule");
    os << "injection,meas_plus,meas_minus,volts\n";
    os << std::setprecision(17);
    for (std::size_t i = 0; i < rows.size(); ++i)
        os << rows[i].injection << ',' << rows[i].plus << ',' << rows[i].minus << ',' << frame.values[Eigen::Index(i)]
           << '\n';
}

VoltageFrame read_frame_csv(std::istream& is, const MeasurementSchedule& schedule) {
    const auto rows = schedule.retained();
    std::string line;
    if (!std::getline(is, line)) throw FormatError("empty voltage frame file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "injection,meas_plus,meas_minus,volts") throw FormatError("unexpected frame header: " + line);
    VoltageFrame f{Eigen::VectorXd(Eigen::Index(rows.size())), schedule.id()};
    std::size_t i = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line == "\r") continue;
        if (i >= rows.size()) throw DimensionError("voltage frame has more rows than the schedule");
        int inj = 0, plus = 0, minus = 0;
        double v = 0.0;
        char c1 = 0, c2 = 0, c3 = 0;
        std::istringstream ss(line);
        if (!(ss >> inj >> c1 >> plus >> c2 >> minus >> c3 >> v) || c1 != ',' || c2 != ',' || c3 != ',')
            throw FormatError("malformed frame row " + std::to_string(i + 1));
        if (inj != rows[i].injection || plus != rows[i].plus || minus != rows[i].minus)
            throw ProvenanceError("frame row " + std::to_string(i + 1) + " does not match the schedule");
        f.values[Eigen::Index(i++)] = v;
    }
    if (i != rows.size())
        throw DimensionError("voltage frame has " + std::to_string(i) + " rows, expected " + std::to_string(rows.size()));
    return f;
}

void save_frame_csv(const VoltageFrame& frame, const MeasurementSchedule& schedule, const std::filesystem::path& path) {
    auto os = open_out(path, false);
    write_frame_csv(os, frame, schedule);
}

VoltageFrame load_frame_csv(const std::filesystem::path& path, const MeasurementSchedule& schedule) {
    auto is = open_in(path, false);
    return read_frame_csv(is, schedule);
}

void write_u32(std::ostream& os, std::uint32_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_u64(std::ostream& os, std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }
void write_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); }

namespace {
template <class T>
T read_pod(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("truncated binary file");
    return v;
}
}  // namespace

std::uint32_t read_u32(std::istream& is) { return read_pod<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_pod<std::uint64_t>(is); }
double read_f64(std::istream& is) { return read_pod<double>(is); }

void write_f64_block(std::ostream& os, const double* data, std::size_t n) {
    os.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(double)));
}

void read_f64_block(std::istream& is, double* data, std::size_t n) {
    if (!is.read(reinterpret_cast<char*>(data), std::streamsize(n * sizeof(double))))
        throw FormatError("truncated binary payload");
}

void save_f64(const Eigen::VectorXd& v, const std::filesystem::path& path) {
    auto os = open_out(path, true);
    write_f64_block(os, v.data(), std::size_t(v.size()));
}

Eigen::VectorXd load_f64(const std::filesystem::path& path) {
    std::error_code ec;
    const auto bytes = std::filesystem::file_size(path, ec);
    if (ec) throw FormatError("cannot stat " + path.string());
    if (bytes % sizeof(double) != 0) throw FormatError(path.string() + " is not a float64 vector");
    Eigen::VectorXd v(Eigen::Index(bytes / sizeof(double)));
    auto is = open_in(path, true);
    read_f64_block(is, v.data(), std::size_t(v.size()));
    return v;
}

void save_reconstruction_matrix(const ReconstructionMatrix& r, const std::filesystem::path& path) {
    auto os = open_out(path, true);
    os.write("EITR", 4);
    write_u32(os, 1);
    write_u64(os, std::uint64_t(r.matrix.rows()));
    write_u64(os, std::uint64_t(r.matrix.cols()));
    write_u64(os, r.mesh_id);
    write_u64(os, r.config_hash);
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = r.matrix;
    write_f64_block(os, rm.data(), std::size_t(rm.size()));
    if (!os) throw FormatError("write failed: " + path.string());
}

ReconstructionMatrix load_reconstruction_matrix(const std::filesystem::path& path) {
    auto is = open_in(path, true);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "EITR", 4) != 0) throw FormatError("not an EITR container");
    if (read_u32(is) != 1) throw FormatError("unsupported EITR version");
    const auto rows = read_u64(is), cols = read_u64(is);
    if (rows > (1u << 24) || cols > (1u << 24)) throw FormatError("EITR dimensions are implausible");
    ReconstructionMatrix r;
    r.mesh_id = read_u64(is);
    r.config_hash = read_u64(is);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    read_f64_block(is, rm.data(), std::size_t(rm.size()));
    r.matrix = rm;
    return r;
}

void write_nodal_image_vtk(std::ostream& os, const Mesh& mesh, const NodalImage& img, const std::string& title) {
    if (std::size_t(img.values.size()) != mesh.node_count()) throw DimensionError("image length does not match the mesh");
    if (img.mesh_id != 0 && img.mesh_id != mesh.id()) throw ProvenanceError("image belongs to a different mesh");
    if (title.find('\n') != std::string::npos) throw FormatError("VTK title must be a single line");
    os << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    os << std::setprecision(17);
    os << "POINTS " << mesh.node_count() << " double\n";
    for (const auto& p : mesh.nodes) os << p.x() << ' ' << p.y() << ' ' << p.z() << '\n';
    os << "CELLS " << mesh.element_count() << ' ' << 5 * mesh.element_count() << '\n';
    for (const auto& t : mesh.tets) os << "4 " << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
    os << "CELL_TYPES " << mesh.element_count() << '\n';
    for (std::size_t e = 0; e < mesh.element_count(); ++e) os << "10\n";
    os << "POINT_DATA " << mesh.node_count() << "\nSCALARS delta_sigma double 1\nLOOKUP_TABLE default\n";
    for (Eigen::Index i = 0; i < img.values.size(); ++i) os << img.values[i] << '\n';
}

}  // namespace eit
