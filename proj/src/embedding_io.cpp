#include "isocal/embedding_io.hpp"

#include <cmath>
#include <fstream>
#include <string>

#include "isocal/errors.hpp"
#include "isocal/text_format.hpp"

namespace isocal {

namespace {

void write_values(std::ostream& out, std::span<const double> values) {
    for (std::size_t j = 0; j < values.size(); ++j) {
        if (j) out << ' ';
        out << format_exact(values[j]);
    }
    out << '\n';
}

std::vector<double> read_values(std::istream& in, std::size_t expected, std::size_t& line_no) {
    std::string line;
    ++line_no;
    if (!std::getline(in, line)) throw ParseError(line_no, "unexpected end of file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<double> values;
    if (expected == 0) {
        if (!line.empty()) throw ParseError(line_no, "expected an empty line");
        return values;
    }
    const auto fields = split_spaces(line);
    if (fields.size() != expected)
        throw ParseError(line_no, "expected " + std::to_string(expected) + " values, found " +
                                      std::to_string(fields.size()));
    values.reserve(expected);
    for (const auto f : fields) {
        const auto v = parse_double(f);
        if (!v) throw ParseError(line_no, "malformed number '" + std::string(f) + "'");
        if (!std::isfinite(*v)) throw ParseError(line_no, "non-finite value '" + std::string(f) + "'");
        values.push_back(*v);
    }
    return values;
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return in;
}

}  // namespace

void write_embeddings(const Matrix& w, std::ostream& out) {
    out << "ISOEMB 1 " << w.rows() << ' ' << w.cols() << '\n';
    for (std::size_t i = 0; i < w.rows(); ++i) write_values(out, w.row(i));
}

void write_embeddings(const Matrix& w, const std::filesystem::path& path) {
    auto out = open_out(path);
    write_embeddings(w, out);
    if (!out) throw IoError("failed writing " + path.string());
}

Matrix read_embeddings(std::istream& in) {
    std::string header;
    if (!std::getline(in, header)) throw ParseError(1, "empty file");
    if (!header.empty() && header.back() == '\r') header.pop_back();
    const auto f = split_spaces(header);
    if (f.size() != 4 || f[0] != "ISOEMB") throw ParseError(1, "expected header 'ISOEMB 1 <N> <d>'");
    const auto version = parse_uint(f[1]);
    if (!version) throw ParseError(1, "malformed version");
    if (*version != 1) throw ParseError(1, "unsupported ISOEMB version " + std::string(f[1]));
    const auto n = parse_uint(f[2]);
    const auto d = parse_uint(f[3]);
    if (!n || !d || *n == 0 || *d == 0) throw ParseError(1, "N and d must be positive integers");

    Matrix w(*n, *d);
    std::size_t line_no = 1;
    for (std::size_t i = 0; i < *n; ++i) {
        const auto values = read_values(in, *d, line_no);
        std::copy(values.begin(), values.end(), w.row(i).begin());
    }
    std::string rest;
    while (std::getline(in, rest)) {
        ++line_no;
        if (!rest.empty() && rest != "\r") throw ParseError(line_no, "unexpected content after last row");
    }
    return w;
}

Matrix read_embeddings(const std::filesystem::path& path) {
    auto in = open_in(path);
    return read_embeddings(in);
}

void write_flow(const FlowModel& model, const std::filesystem::path& path) {
    auto out = open_out(path);
    const std::size_t hidden = model.layers.empty() ? 0 : model.layers[0].scale_net.b1.size();
    const double s_max = model.layers.empty() ? 3.0 : model.layers[0].s_max;
    out << "ISOFLOW 1 " << model.dim << ' ' << model.layers.size() << ' ' << hidden << ' '
        << format_exact(s_max) << '\n';
    for (const auto& layer : model.layers)
        for (const Mlp* net : {&layer.scale_net, &layer.shift_net}) {
            write_values(out, net->w1.data());
            write_values(out, net->b1);
            write_values(out, net->w2.data());
            write_values(out, net->b2);
        }
    if (!out) throw IoError("failed writing " + path.string());
}

FlowModel read_flow(const std::filesystem::path& path) {
    auto in = open_in(path);
    std::string header;
    if (!std::getline(in, header)) throw ParseError(1, "empty file");
    const auto f = split_spaces(header);
    if (f.size() != 6 || f[0] != "ISOFLOW") throw ParseError(1, "expected ISOFLOW header");
    if (f[1] != "1") throw ParseError(1, "unsupported ISOFLOW version " + std::string(f[1]));
    const auto dim = parse_uint(f[2]);
    const auto layers = parse_uint(f[3]);
    const auto hidden = parse_uint(f[4]);
    const auto s_max = parse_double(f[5]);
    if (!dim || !layers || !hidden || !s_max || *dim == 0 || *hidden == 0 || !(*s_max > 0.0))
        throw ParseError(1, "malformed ISOFLOW header");

    Rng unused(0);
    FlowModel model = make_flow(*dim, unused, FlowConfig{*layers, *s_max, *hidden});
    std::size_t line_no = 1;
    for (auto& layer : model.layers)
        for (Mlp* net : {&layer.scale_net, &layer.shift_net}) {
            for (std::span<double> block :
                 {net->w1.data(), std::span<double>(net->b1), net->w2.data(), std::span<double>(net->b2)}) {
                const auto values = read_values(in, block.size(), line_no);
                std::copy(values.begin(), values.end(), block.begin());
            }
        }
    return model;
}

}  // namespace isocal
