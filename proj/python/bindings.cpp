#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "eit/datagen.hpp"
#include "eit/errors.hpp"
#include "eit/fem.hpp"
#include "eit/io.hpp"
#include "eit/mesh.hpp"
#include "eit/metrics.hpp"
#include "eit/rbf.hpp"
#include "eit/recon_linear.hpp"
#include "eit/recon_pdipm.hpp"

namespace py = pybind11;
using namespace eit;

namespace {

Eigen::MatrixXd nodes_array(const Mesh& m) {
    Eigen::MatrixXd out(Eigen::Index(m.node_count()), 3);
    for (std::size_t i = 0; i < m.node_count(); ++i) out.row(Eigen::Index(i)) = m.nodes[i].transpose();
    return out;
}

Eigen::MatrixXi tets_array(const Mesh& m) {
    Eigen::MatrixXi out(Eigen::Index(m.element_count()), 4);
    for (std::size_t e = 0; e < m.element_count(); ++e)
        for (int k = 0; k < 4; ++k) out(Eigen::Index(e), k) = m.tets[e][std::size_t(k)];
    return out;
}

py::list trace_list(const ConvergenceTrace& t) {
    py::list out;
    for (const auto& e : t.entries) out.append(py::make_tuple(e.iter, e.objective, e.step_len, e.dual_max));
    return out;
}

}  // namespace

PYBIND11_MODULE(_eitpp, m) {
    m.doc() = "Probe-based electrical impedance tomography";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<GeometryError>(m, "GeometryError", base.ptr());
    py::register_exception<MeshingError>(m, "MeshingError", base.ptr());
    py::register_exception<SingularSystemError>(m, "SingularSystemError", base.ptr());
    py::register_exception<IllConditionedError>(m, "IllConditionedError", base.ptr());
    py::register_exception<ProvenanceError>(m, "ProvenanceError", base.ptr());
    py::register_exception<DegenerateDataError>(m, "DegenerateDataError", base.ptr());
    py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
    py::register_exception<SingularGramError>(m, "SingularGramError", base.ptr());
    py::register_exception<EmptyImageError>(m, "EmptyImageError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<SolverError>(m, "SolverError", base.ptr());

    py::class_<TankGeometry>(m, "TankGeometry")
        .def(py::init<>())
        .def_readwrite("probe_radius", &TankGeometry::probe_radius)
        .def_readwrite("probe_height", &TankGeometry::probe_height)
        .def_readwrite("tank_radius", &TankGeometry::tank_radius)
        .def_readwrite("tank_height", &TankGeometry::tank_height)
        .def_readwrite("layers", &TankGeometry::layers)
        .def_readwrite("electrodes_per_layer", &TankGeometry::electrodes_per_layer)
        .def_readwrite("electrode_arc", &TankGeometry::electrode_arc)
        .def_readwrite("electrode_height", &TankGeometry::electrode_height)
        .def_readwrite("layer_pitch", &TankGeometry::layer_pitch)
        .def_property_readonly("electrode_count", &TankGeometry::electrode_count)
        .def("check", &TankGeometry::check);

    py::class_<RefinementSpec>(m, "RefinementSpec")
        .def(py::init<>())
        .def(py::init([](double near, double far, std::uint64_t seed) {
                 RefinementSpec r;
                 r.near_edge = near;
                 r.far_edge = far;
                 r.seed = seed;
                 return r;
             }),
             py::arg("near_edge"), py::arg("far_edge"), py::arg("seed") = 0)
        .def_readwrite("near_edge", &RefinementSpec::near_edge)
        .def_readwrite("far_edge", &RefinementSpec::far_edge)
        .def_readwrite("seed", &RefinementSpec::seed)
        .def_readwrite("jitter", &RefinementSpec::jitter)
        .def_readwrite("growth", &RefinementSpec::growth);
    m.def("refinement_preset", &refinement_preset);

    py::class_<Mesh>(m, "Mesh")
        .def_readonly("geometry", &Mesh::geometry)
        .def_property_readonly("node_count", &Mesh::node_count)
        .def_property_readonly("element_count", &Mesh::element_count)
        .def_property_readonly("id", &Mesh::id)
        .def_property_readonly("nodes", &nodes_array)
        .def_property_readonly("tets", &tets_array)
        .def_property_readonly("electrode_face_counts", [](const Mesh& mesh) {
            std::vector<std::size_t> n;
            for (const auto& p : mesh.electrodes) n.push_back(p.size());
            return n;
        })
        .def("to_json", &mesh_to_json)
        .def("save", [](const Mesh& mesh, const std::filesystem::path& p) { save_mesh(mesh, p); })
        .def("validate", [](const Mesh& mesh) {
            const auto r = validate_mesh(mesh);
            return py::make_tuple(r.ok(), r.summary());
        });
    m.def("build_mesh", &build_mesh, py::arg("geometry") = TankGeometry{}, py::arg("refinement") = RefinementSpec{});
    m.def("load_mesh", &load_mesh);
    m.def("mesh_from_json", &mesh_from_json);

    py::class_<StimPattern>(m, "StimPattern")
        .def_static("adjacent", &StimPattern::adjacent, py::arg("geometry") = TankGeometry{},
                    py::arg("amplitude") = 5e-6)
        .def_readonly("injections", &StimPattern::injections)
        .def_readonly("amplitude", &StimPattern::amplitude);

    py::class_<MeasurementSchedule>(m, "MeasurementSchedule")
        .def_static("adjacent", &MeasurementSchedule::adjacent)
        .def_property_readonly("retained_count", &MeasurementSchedule::retained_count)
        .def_property_readonly("id", &MeasurementSchedule::id)
        .def("retained", [](const MeasurementSchedule& s) {
            std::vector<std::tuple<int, int, int>> out;
            for (const auto& e : s.retained()) out.emplace_back(e.injection, e.plus, e.minus);
            return out;
        });

    py::class_<VoltageFrame>(m, "VoltageFrame")
        .def(py::init([](Eigen::VectorXd v, std::uint64_t id) { return VoltageFrame{std::move(v), id}; }))
        .def_readonly("values", &VoltageFrame::values)
        .def_readonly("schedule_id", &VoltageFrame::schedule_id);
    m.def("frame_difference", &frame_difference);
    m.def("load_frame_csv", &load_frame_csv);
    m.def("save_frame_csv", &save_frame_csv);

    m.def(
        "solve_forward",
        [](const Mesh& mesh, const Eigen::VectorXd& sigma, const StimPattern& pat, const MeasurementSchedule& sch,
           double z) { return solve_forward(assemble_system(mesh, ConductivityField{sigma}, z), pat, sch); },
        py::arg("mesh"), py::arg("sigma"), py::arg("pattern"), py::arg("schedule"), py::arg("contact_impedance") = 0.01,
        "Voltage frame for per-element conductivities.");

    py::class_<Jacobian>(m, "Jacobian")
        .def_readonly("matrix", &Jacobian::matrix)
        .def_readonly("mesh_id", &Jacobian::mesh_id)
        .def_readonly("schedule_id", &Jacobian::schedule_id);
    m.def(
        "compute_jacobian",
        [](const Mesh& mesh, double sigma_ref, const StimPattern& pat, const MeasurementSchedule& sch, double z) {
            return compute_jacobian(mesh, ConductivityField::uniform(mesh, sigma_ref), pat, sch, z);
        },
        py::arg("mesh"), py::arg("sigma_ref"), py::arg("pattern"), py::arg("schedule"),
        py::arg("contact_impedance") = 0.01);

    py::class_<TargetSpec>(m, "TargetSpec")
        .def(py::init<>())
        .def_readwrite("center", &TargetSpec::center)
        .def_readwrite("semi_axes", &TargetSpec::semi_axes)
        .def_readwrite("rotation", &TargetSpec::rotation)
        .def_readwrite("sigma_in", &TargetSpec::sigma_in)
        .def_readwrite("sigma_bg", &TargetSpec::sigma_bg)
        .def("contains", &TargetSpec::contains)
        .def("to_json", &target_to_json);
    py::class_<TargetBounds>(m, "TargetBounds").def(py::init<>());
    m.def("place_target", &place_target, py::arg("rotation"), py::arg("azimuth"), py::arg("z"), py::arg("distance"),
          py::arg("bounds") = TargetBounds{});
    m.def("probe_distance", &probe_distance, py::arg("target"), py::arg("probe_radius") = 1.0);
    m.def("rasterize_target", [](const Mesh& mesh, const TargetSpec& t) { return rasterize_target(mesh, t).sigma; });

    py::class_<NodalImage>(m, "NodalImage")
        .def(py::init([](Eigen::VectorXd v, std::uint64_t id) { return NodalImage{std::move(v), id}; }))
        .def_readonly("values", &NodalImage::values)
        .def_readonly("mesh_id", &NodalImage::mesh_id);

    py::class_<GnConfig>(m, "GnConfig")
        .def(py::init<>())
        .def_readwrite("lambda_", &GnConfig::lambda)
        .def_readwrite("identity_weight", &GnConfig::identity_weight)
        .def_readwrite("sigma_ref", &GnConfig::sigma_ref)
        .def("hash", &GnConfig::hash);
    py::class_<ReconstructionMatrix>(m, "ReconstructionMatrix")
        .def_readonly("matrix", &ReconstructionMatrix::matrix)
        .def_readonly("mesh_id", &ReconstructionMatrix::mesh_id)
        .def_readonly("config_hash", &ReconstructionMatrix::config_hash);
    m.def("build_reconstruction_matrix", &build_reconstruction_matrix, py::arg("jacobian"), py::arg("mesh"),
          py::arg("config") = GnConfig{});
    m.def("reconstruct_gn", &reconstruct_gn);

    py::class_<PdipmConfig>(m, "PdipmConfig")
        .def(py::init<>())
        .def_readwrite("alpha", &PdipmConfig::alpha)
        .def_readwrite("beta", &PdipmConfig::beta)
        .def_readwrite("max_iters", &PdipmConfig::max_iters)
        .def_readwrite("tol", &PdipmConfig::tol);
    py::class_<PdipmSolver>(m, "PdipmSolver")
        .def(py::init<const Mesh&, const Jacobian&, const PdipmConfig&>(), py::arg("mesh"), py::arg("jacobian"),
             py::arg("config") = PdipmConfig{}, py::keep_alive<1, 2>(), py::keep_alive<1, 3>())
        .def(
            "solve",
            [](const PdipmSolver& s, const VoltageFrame& dv) {
                PdipmResult r;
                try {
                    py::gil_scoped_release release;
                    r = s.solve(dv);
                } catch (const LineSearchError& e) {
                    r = e.best();
                }
                return py::make_tuple(r.elements, r.image, trace_list(r.trace));
            },
            "Returns (element image, nodal image, [(iter, objective, step_len, dual_max)]).");

    py::class_<ErrorReport>(m, "ErrorReport")
        .def_readonly("nade", &ErrorReport::nade)
        .def_readonly("delta_res", &ErrorReport::delta_res)
        .def_readonly("sd", &ErrorReport::sd)
        .def_readonly("degenerate", &ErrorReport::degenerate);
    m.def(
        "evaluate",
        [](const Mesh& mesh, const NodalImage& img, const TargetSpec& t, double distance, int n, double half_width) {
            GridSpec g;
            g.n = n;
            g.half_width = half_width;
            return full_report(mesh, img, t, g, distance, "image");
        },
        py::arg("mesh"), py::arg("image"), py::arg("target"), py::arg("distance"), py::arg("grid_n") = 64,
        py::arg("half_width") = 24.0, "NADE, |dRES| and SD of a nodal image against a target.");

    py::enum_<RbfMode>(m, "RbfMode").value("Direct", RbfMode::Direct).value("PostProc", RbfMode::PostProc);
    py::class_<TrainConfig>(m, "TrainConfig")
        .def(py::init<>())
        .def_readwrite("hidden_count", &TrainConfig::hidden_count)
        .def_readwrite("spread", &TrainConfig::spread)
        .def_readwrite("ridge", &TrainConfig::ridge)
        .def_readwrite("val_fraction", &TrainConfig::val_fraction)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("max_rounds", &TrainConfig::max_rounds)
        .def_readwrite("patience", &TrainConfig::patience)
        .def_readwrite("ridge_steps", &TrainConfig::ridge_steps)
        .def_readwrite("centers_from_inputs", &TrainConfig::centers_from_inputs)
        .def("hash", &TrainConfig::hash);
    py::class_<RbfModel>(m, "RbfModel")
        .def_readonly("mode", &RbfModel::mode)
        .def_readonly("spread", &RbfModel::spread)
        .def_readonly("centers", &RbfModel::centers)
        .def_readonly("weights", &RbfModel::weights)
        .def_readonly("bias", &RbfModel::bias)
        .def_property_readonly("hidden_count", &RbfModel::hidden_count)
        .def("evaluate", &RbfModel::evaluate)
        .def("save", [](const RbfModel& model, const std::filesystem::path& p) { save_model(model, p); });
    m.def("load_model", &load_model);
    m.def(
        "train",
        [](const Eigen::MatrixXd& x, const Eigen::MatrixXd& t, RbfMode mode, const TrainConfig& cfg) {
            TrainResult r;
            {
                py::gil_scoped_release release;
                r = train(x, t, mode, cfg);
            }
            py::list rounds;
            for (const auto& e : r.trace.rounds) rounds.append(py::make_tuple(e.spread, e.ridge, e.train_mse, e.val_mse));
            return py::make_tuple(r.model, rounds, r.trace.best);
        },
        py::arg("inputs"), py::arg("targets"), py::arg("mode"), py::arg("config") = TrainConfig{},
        "Returns (model, [(spread, ridge, train_mse, val_mse)], best index).");
}
