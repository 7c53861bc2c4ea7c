#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "shapeset/applications.hpp"
#include "shapeset/checkpoint.hpp"
#include "shapeset/dataset_io.hpp"
#include "shapeset/error.hpp"
#include "shapeset/metrics.hpp"

namespace py = pybind11;
using namespace shapeset;

namespace {

using Rows = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

PointCloud to_cloud(const Rows& a) {
  PointCloud out;
  out.reserve(static_cast<std::size_t>(a.rows()));
  for (Eigen::Index i = 0; i < a.rows(); ++i) out.push_back({a(i, 0), a(i, 1), a(i, 2)});
  return out;
}

Rows to_rows(std::span<const Point3> c) {
  Rows out(static_cast<Eigen::Index>(c.size()), 3);
  for (std::size_t i = 0; i < c.size(); ++i) out.row(static_cast<Eigen::Index>(i)) << c[i].x, c[i].y, c[i].z;
  return out;
}

std::vector<PointCloud> to_clouds(const std::vector<Rows>& arrays) {
  std::vector<PointCloud> out;
  for (const auto& a : arrays) out.push_back(to_cloud(a));
  return out;
}

py::dict shape_dict(const SegmentedShape& s) {
  py::list parts;
  for (const auto& p : s.parts) parts.append(py::make_tuple(p.category, to_rows(p.points)));
  py::dict d;
  d["id"] = s.id;
  d["parts"] = parts;
  return d;
}

CloudDistance parse_distance(const std::string& name) {
  if (name == "cd" || name == "chamfer") return CloudDistance::Chamfer;
  if (name == "emd") return CloudDistance::Emd;
  throw ValidationError("distance must be 'cd' or 'emd'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Part SSMs, label codebook and set diffusion for segmented point clouds.";

  static py::exception<Error> base(m, "Error");
  static py::exception<ValidationError> validation(m, "ValidationError", base.ptr());
  static py::exception<NumericalError> numerical(m, "NumericalError", base.ptr());
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const ValidationError& e) {
      py::set_error(validation, e.what());
    } catch (const NumericalError& e) {
      py::set_error(numerical, e.what());
    } catch (const Error& e) {
      py::set_error(base, e.what());
    }
  });

  m.def("generate_dataset", [](int n, std::uint64_t seed, int points_per_part, double amplitude) {
        FamilyConfig family;
        family.points_per_part = points_per_part;
        family.amplitude = amplitude;
        py::list out;
        for (const auto& s : generate_dataset(family, n, seed).dataset.shapes) out.append(shape_dict(s));
        return out;
      },
      py::arg("n"), py::arg("seed") = 0, py::arg("points_per_part") = 256, py::arg("amplitude") = 1.0,
      "Synthetic chairs as dicts {id, parts: [(category, p x 3 array)]}.");

  m.def("write_synthetic_dataset", [](const std::filesystem::path& dir, int n, std::uint64_t seed) {
        write_dataset(generate_dataset(FamilyConfig{}, n, seed).dataset, dir);
      },
      py::arg("dir"), py::arg("n"), py::arg("seed") = 0);

  m.def("normalize_to_unit_cube", [](const Rows& a) {
        const auto [cloud, t] = normalize_to_unit_cube(to_cloud(a));
        return py::make_tuple(to_rows(cloud), t.scale, py::make_tuple(t.offset.x, t.offset.y, t.offset.z));
      });

  py::class_<PartSSM>(m, "PartSSM")
      .def_readonly("category", &PartSSM::category)
      .def_readonly("points_per_part", &PartSSM::points_per_part)
      .def_readonly("mean", &PartSSM::mean)
      .def_readonly("basis", &PartSSM::basis)
      .def_readonly("eigenvalues", &PartSSM::eigenvalues)
      .def_property_readonly("q", &PartSSM::q)
      .def("encode", [](const PartSSM& s, const Rows& pts) { return encode_part(s, {s.category, to_cloud(pts)}); })
      .def("decode", [](const PartSSM& s, const Eigen::VectorXd& z) { return to_rows(decode_part(s, z).points); })
      .def("fit_latent", [](const PartSSM& s, const Rows& observed, double ridge) {
            const auto fit = fit_latent_least_squares(s, to_cloud(observed), ridge);
            return py::make_tuple(fit.z, fit.residual);
          },
          py::arg("observed"), py::arg("ridge") = 1e-3)
      .def("save", [](const PartSSM& s, const std::filesystem::path& p) { save_ssm(s, p); });

  m.def("fit_ssm", [](const std::vector<Rows>& parts, int q, int category) {
        std::vector<CorrespondedCloud> clouds;
        for (const auto& p : parts) clouds.push_back({category, to_cloud(p)});
        return fit_ssm(clouds, q);
      },
      py::arg("parts"), py::arg("q"), py::arg("category") = 0);
  m.def("load_ssm", [](const std::filesystem::path& p) { return load_ssm(p); });

  py::class_<ShapeLatent>(m, "ShapeLatent")
      .def(py::init([](Eigen::MatrixXd values, std::vector<std::uint8_t> mask) { return ShapeLatent{std::move(values), std::move(mask)}; }),
           py::arg("values"), py::arg("mask"))
      .def_readonly("values", &ShapeLatent::values)
      .def_readonly("mask", &ShapeLatent::mask)
      .def("__eq__", [](const ShapeLatent& a, const ShapeLatent& b) { return a == b; });

  py::class_<Model>(m, "Model")
      .def_property_readonly("m", [](const Model& md) { return md.layout.m; })
      .def_property_readonly("q", [](const Model& md) { return md.layout.q; })
      .def_property_readonly("steps", [](const Model& md) { return md.schedule.steps(); })
      .def_readonly("category_names", &Model::category_names)
      .def_readonly("ssms", &Model::ssms)
      .def_property_readonly("alpha_bars", [](const Model& md) { return md.schedule.alpha_bars; })
      .def("save", [](const Model& md, const std::filesystem::path& p) { save_checkpoint(md, p); })
      .def("sample", [](const Model& md, int count, std::uint64_t seed) {
            py::gil_scoped_release release;
            return sample_latents(md, count, seed);
          },
          py::arg("count"), py::arg("seed") = 0)
      .def("decode", [](const Model& md, const ShapeLatent& z) {
            return shape_dict(decode_shape(z, md.ssms, md.codebook, md.layout));
          })
      .def("encode", [](const Model& md, const py::dict& shape) {
            SegmentedShape s;
            for (const auto& item : shape["parts"].cast<py::list>()) {
              const auto t = item.cast<py::tuple>();
              s.parts.push_back({t[0].cast<int>(), to_cloud(t[1].cast<Rows>())});
            }
            return encode_shape(s, md.ssms, md.codebook, md.layout);
          })
      .def("complete", [](const Model& md, const Rows& observed, int k, std::uint64_t seed, double ridge) {
            const auto r = cascaded_complete(md, to_cloud(observed), k, seed, ridge);
            py::list shapes;
            for (const auto& s : r.shapes) shapes.append(shape_dict(s));
            py::dict d;
            d["category"] = r.match.category;
            d["ambiguous"] = r.match.ambiguous;
            d["residual"] = r.fit.residual;
            d["latent"] = r.fit.z;
            d["latents"] = r.latents;
            d["shapes"] = shapes;
            return d;
          },
          py::arg("observed"), py::arg("k") = 3, py::arg("seed") = 0, py::arg("ridge") = 1e-3)
      .def("interpolate", [](const Model& md, const ShapeLatent& a, const ShapeLatent& b, int category, double alpha) {
            return interpolate_part(md, a, b, category, alpha);
          })
      .def("add_part", [](const Model& md, const ShapeLatent& z, int category, const Eigen::VectorXd& part) {
            return add_part(md, z, category, part);
          })
      .def("replace_part", [](const Model& md, const ShapeLatent& z, int category, const Eigen::VectorXd& part) {
            return replace_part(md, z, category, part);
          });

  m.def("load_checkpoint", [](const std::filesystem::path& p) { return load_checkpoint(p); });

  m.def("train_model", [](const std::filesystem::path& dataset_dir, int q, int steps, int width, int blocks,
                          int diffusion_steps, std::uint64_t seed) {
        const Dataset data = read_dataset(dataset_dir);
        std::vector<PartSSM> ssms;
        std::vector<std::string> names;
        int common = q;
        for (int c = 0; c < data.category_count(); ++c) {
          SsmFitInfo info;
          const auto parts = data.parts_of(c);
          if (parts.size() < 2) throw ValidationError("category " + data.categories[static_cast<std::size_t>(c)].name + " has fewer than 2 parts");
          fit_ssm(parts, std::min<int>(q, static_cast<int>(parts.size()) - 1), &info);
          common = std::min(common, info.retained_q);
        }
        for (int c = 0; c < data.category_count(); ++c) {
          ssms.push_back(fit_ssm(data.parts_of(c), common));
          names.push_back(data.categories[static_cast<std::size_t>(c)].name);
        }
        DenoiserConfig dc;
        dc.width = width;
        dc.time_dim = width;
        dc.blocks = blocks;
        Model model = make_model(std::move(ssms), names, dc, diffusion_steps, {}, seed);
        std::vector<ShapeLatent> latents;
        for (const auto& s : data.shapes) latents.push_back(encode_shape(s, model.ssms, model.codebook, model.layout));
        TrainConfig tc;
        tc.steps = steps;
        tc.seed = seed;
        tc.warmup = std::min(tc.warmup, std::max(1, steps / 10));
        std::vector<double> losses;
        {
          py::gil_scoped_release release;
          for (const auto& r : train_denoiser(model, latents, tc)) losses.push_back(r.loss.total);
        }
        return py::make_tuple(model, losses);
      },
      py::arg("dataset_dir"), py::arg("q") = 64, py::arg("steps") = 200, py::arg("width") = 64, py::arg("blocks") = 2,
      py::arg("diffusion_steps") = 200, py::arg("seed") = 0, "Fit SSMs and train a denoiser; returns (model, losses).");

  m.def("forward_noise", [](double alpha_bar, const Eigen::MatrixXd& clean, const Eigen::MatrixXd& noise) {
        return forward_noise(alpha_bar, clean, noise);
      });
  m.def("kl_from_moments", &kl_from_moments, py::arg("mu"), py::arg("var"));

  m.def("chamfer", [](const Rows& a, const Rows& b) { return chamfer(to_cloud(a), to_cloud(b)); });
  m.def("emd", [](const Rows& a, const Rows& b) { return emd(to_cloud(a), to_cloud(b)); });
  m.def("mmd", [](const std::vector<Rows>& gen, const std::vector<Rows>& ref, const std::string& d) {
        return mmd(to_clouds(gen), to_clouds(ref), parse_distance(d));
      },
      py::arg("gen"), py::arg("ref"), py::arg("distance") = "cd");
  m.def("cov", [](const std::vector<Rows>& gen, const std::vector<Rows>& ref, const std::string& d) {
        return cov(to_clouds(gen), to_clouds(ref), parse_distance(d));
      },
      py::arg("gen"), py::arg("ref"), py::arg("distance") = "cd");
  m.def("nna", [](const std::vector<Rows>& gen, const std::vector<Rows>& ref, const std::string& d) {
        return nna(to_clouds(gen), to_clouds(ref), parse_distance(d));
      },
      py::arg("gen"), py::arg("ref"), py::arg("distance") = "cd");
}
