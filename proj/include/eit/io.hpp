#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include <Eigen/Core>

#include "eit/fem.hpp"
#include "eit/mesh.hpp"
#include "eit/recon_linear.hpp"

namespace eit {

// Mesh as JSON: geometry, nodes, tets, electrode patches, outer faces and id.
std::string mesh_to_json(const Mesh& mesh);
Mesh mesh_from_json(const std::string& text);
void save_mesh(const Mesh& mesh, const std::filesystem::path& path);
Mesh load_mesh(const std::filesystem::path& path);

std::string target_to_json(const TargetSpec& t);
TargetSpec target_from_json(const std::string& text);

/// CSV with header `injection,meas_plus,meas_minus,volts`, one row per
/// retained measurement in frame order.
void write_frame_csv(std::ostream& os, const VoltageFrame& frame, const MeasurementSchedule& schedule);
VoltageFrame read_frame_csv(std::istream& is, const MeasurementSchedule& schedule);
void save_frame_csv(const VoltageFrame& frame, const MeasurementSchedule& schedule, const std::filesystem::path& path);
VoltageFrame load_frame_csv(const std::filesystem::path& path, const MeasurementSchedule& schedule);

/// Raw little-endian float64 vector.
void save_f64(const Eigen::VectorXd& v, const std::filesystem::path& path);
Eigen::VectorXd load_f64(const std::filesystem::path& path);

/// Binary matrix container: magic "EITR", u32 version, u64 rows, u64 cols,
/// u64 mesh id, u64 config hash, row-major float64 payload.
void save_reconstruction_matrix(const ReconstructionMatrix& r, const std::filesystem::path& path);
ReconstructionMatrix load_reconstruction_matrix(const std::filesystem::path& path);

// Little-endian primitives shared by the binary containers.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
void write_f64_block(std::ostream& os, const double* data, std::size_t n);
void read_f64_block(std::istream& is, double* data, std::size_t n);

/// Nodal image on its tetrahedral mesh in the legacy VTK text layout. The
/// title line carries free-form provenance.
void write_nodal_image_vtk(std::ostream& os, const Mesh& mesh, const NodalImage& img, const std::string& title);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace eit
