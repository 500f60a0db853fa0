#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <sstream>

#include "camf/checkpoint.hpp"
#include "camf/cli.hpp"
#include "camf/error.hpp"
#include "camf/inference.hpp"
#include "camf/metrics.hpp"
#include "camf/model.hpp"
#include "camf/tokenizer.hpp"
#include "camf/training.hpp"

namespace py = pybind11;
using namespace camf;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
    if (a.ndim() != 2) throw InvalidShape("expected a 2-d array");
    Tensor t({static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1))});
    std::copy(a.data(), a.data() + a.size(), t.data().begin());
    return t;
}

Array to_array(const Tensor& t) {
    Array out({t.rows(), t.cols()});
    std::copy(t.data().begin(), t.data().end(), out.mutable_data());
    return out;
}

EmbeddingSet embedding_set(const std::vector<std::vector<double>>& rows) {
    static const std::vector<std::string> names{"sgns", "char", "electra"};
    if (rows.empty() || rows.size() > names.size()) throw InvalidInput("expected 1 to 3 embedding vectors");
    Tensor m({rows.size(), rows[0].size()});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != rows[0].size()) throw InvalidShape("embedding vectors differ in width");
        std::copy(rows[r].begin(), rows[r].end(), m.data().begin() + static_cast<std::ptrdiff_t>(r * m.cols()));
    }
    return EmbeddingSet({names.begin(), names.begin() + static_cast<std::ptrdiff_t>(rows.size())}, m);
}

// A checkpoint together with the vocabulary it was trained with.
struct Model {
    LoadedModel model;
    Vocabulary vocab;

    static Model load(const std::string& path, const std::string& vocab_path) {
        Checkpoint ckpt = load_checkpoint(path);
        const std::string vp =
            vocab_path.empty() ? (std::filesystem::path(path).parent_path() / ckpt.vocab_path).string() : vocab_path;
        Model m{{ckpt.config, std::move(ckpt.params), ckpt.vocab_fingerprint}, Vocabulary::load(vp)};
        if (m.vocab.fingerprint() != m.model.vocab_fingerprint) throw DataError("vocabulary fingerprint mismatch");
        return m;
    }

    std::string generate(const std::vector<std::vector<double>>& embeddings, std::size_t beam,
                         std::size_t max_len) const {
        const EmbeddingSet e = embedding_set(embeddings);
        const auto r = ensemble_decode(std::span(&model, 1), &e, max_len ? max_len : model.config.max_len, beam);
        return vocab.decode(r.ids);
    }
};

}  // namespace

PYBIND11_MODULE(_camf, m) {
    m.doc() = "Definition modeling from word embeddings";

    auto base = py::register_exception<Error>(m, "Error");
    py::register_exception<InvalidShape>(m, "InvalidShape", base.ptr());
    py::register_exception<IndexError>(m, "IndexError", base.ptr());
    py::register_exception<InvalidConfig>(m, "InvalidConfig", base.ptr());
    py::register_exception<DataError>(m, "DataError", base.ptr());
    py::register_exception<LengthError>(m, "LengthError", base.ptr());
    py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());

    m.attr("PAD") = static_cast<int>(kPad);
    m.attr("BOS") = static_cast<int>(kBos);
    m.attr("EOS") = static_cast<int>(kEos);
    m.attr("UNK") = static_cast<int>(kUnk);
    m.attr("MASK") = static_cast<int>(kMask);

    py::class_<Vocabulary>(m, "Vocabulary")
        .def_static("learn", [](const std::vector<std::string>& corpus, std::size_t size) {
            return Vocabulary::learn(corpus, size);
        }, py::arg("corpus"), py::arg("size"))
        .def_static("load", &Vocabulary::load, py::arg("path"))
        .def("save", &Vocabulary::save, py::arg("path"))
        .def("encode", &Vocabulary::encode, py::arg("text"))
        .def("decode", [](const Vocabulary& v, const std::vector<int>& ids) { return v.decode(ids); },
             py::arg("ids"))
        .def("token", &Vocabulary::token, py::arg("id"))
        .def("find", &Vocabulary::find, py::arg("token"))
        .def_property_readonly("merges", [](const Vocabulary& v) {
            std::vector<std::pair<std::string, std::string>> out;
            for (const auto& mg : v.merges()) out.emplace_back(mg.first, mg.second);
            return out;
        })
        .def_property_readonly("fingerprint", &Vocabulary::fingerprint)
        .def("__len__", &Vocabulary::size)
        .def("__eq__", [](const Vocabulary& a, const Vocabulary& b) { return a == b; });

    m.def("sentence_bleu", [](const std::string& h, const std::string& r) { return sentence_bleu(h, r); },
          py::arg("hypothesis"), py::arg("reference"));
    m.def("lemma_bleu", [](const std::string& h, const std::string& r, const std::string& lemma_map) {
        const LemmaMap map = lemma_map.empty() ? LemmaMap::identity() : LemmaMap::load_tsv(lemma_map);
        return lemma_bleu(h, r, map);
    }, py::arg("hypothesis"), py::arg("reference"), py::arg("lemma_map") = "");

    m.def("cross_attention", [](const Array& hidden, std::optional<Array> embeddings) {
        const Tensor h = to_tensor(hidden);
        if (!embeddings) return to_array(cross_attention(h, kZeroEmbeddings));
        const Tensor rows = to_tensor(*embeddings);
        std::vector<std::string> names;
        for (std::size_t i = 0; i < rows.rows(); ++i) names.push_back("e" + std::to_string(i));
        const EmbeddingSet e(names, rows);
        return to_array(cross_attention(h, &e));
    }, py::arg("hidden"), py::arg("embeddings") = py::none(),
       "Parameter-free cross-attention; embeddings=None is the zero mask.");

    m.def("noam_lr", [](std::uint64_t step, const std::string& train_config) {
        const TrainConfig cfg = train_config.empty() ? TrainConfig{} : TrainConfig::from_json(nlohmann::json::parse(train_config));
        return noam_lr(step, cfg);
    }, py::arg("step"), py::arg("train_config") = "");

    m.def("profile", [](const std::string& name) {
        const Profile p = profile_by_name(name);
        return nlohmann::json{{"model", p.model.to_json()}, {"train", p.train.to_json()}, {"vocab_size", p.vocab_size}}
            .dump();
    }, py::arg("name"));

    py::class_<Model>(m, "Model")
        .def_static("load", &Model::load, py::arg("path"), py::arg("vocab_path") = "")
        .def("generate", &Model::generate, py::arg("embeddings"), py::arg("beam") = 1, py::arg("max_len") = 0,
             py::call_guard<py::gil_scoped_release>())
        .def_property_readonly("config_json", [](const Model& md) { return md.model.config.to_json().dump(); })
        .def_property_readonly("vocab", [](const Model& md) { return md.vocab; });

    m.def("run_cli", [](const std::vector<std::string>& args) {
        std::vector<std::string> full{"camf"};
        full.insert(full.end(), args.begin(), args.end());
        std::vector<const char*> argv;
        for (const auto& a : full) argv.push_back(a.c_str());
        std::ostringstream out, err;
        int code;
        {
            py::gil_scoped_release release;
            code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
    }, py::arg("args"));
}
