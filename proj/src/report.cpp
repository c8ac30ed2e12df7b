#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>

#include "ddcal/error.hpp"
#include "ddcal/pipeline.hpp"
#include "ddcal/tensor_io.hpp"

namespace ddcal {

namespace {

std::ostringstream csv_stream() {
    std::ostringstream o;
    o << std::setprecision(17);
    return o;
}

std::string join_seeds(const std::vector<std::uint64_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
    return s;
}

const CalibrationReport* find_report(const SeedRecord& s, const std::string& method) {
    for (const auto& r : s.reports)
        if (r.method == method) return &r;
    return nullptr;
}

struct Stat {
    double mean = 0.0, sd = 0.0;
    std::size_t n = 0;
};

Stat stat_of(const std::vector<double>& v) {
    Stat s;
    s.n = v.size();
    if (!v.empty()) s.mean = mean_of(v);
    if (v.size() >= 2) s.sd = sample_sd(v);
    return s;
}

std::vector<const SeedRecord*> ok_seeds(const RunRecord& r) {
    std::vector<const SeedRecord*> out;
    for (const auto& s : r.seeds)
        if (s.ok) out.push_back(&s);
    return out;
}

[[noreturn]] void missing(const std::string& what) {
    throw UsageError("artifact '" + what + "' is not present in the run record");
}

}  // namespace

std::string report_csv(const RunRecord& record) {
    auto o = csv_stream();
    o << "method,seeds,missing_seeds,raw_ece,raw_ece_sd,ece,ece_sd,signed_gap,signed_gap_sd,accuracy,accuracy_sd,"
         "over_calibrated\n";
    const std::string missing_ids = join_seeds(record.failed_seeds());
    std::vector<double> raw_ece;
    for (const SeedRecord* s : ok_seeds(record))
        if (const auto* r = find_report(*s, "raw")) raw_ece.push_back(r->ece);
    const Stat raw = stat_of(raw_ece);
    for (const Aggregate& a : record.aggregates()) {
        o << a.method << "," << a.count << "," << missing_ids << "," << raw.mean << "," << raw.sd << "," << a.ece_mean
          << "," << a.ece_sd << "," << a.gap_mean << "," << a.gap_sd << "," << a.acc_mean << "," << a.acc_sd << ","
          << (a.gap_mean < -0.01 ? 1 : 0) << "\n";
    }
    return o.str();
}

std::filesystem::path emit_report(const RunRecord& record, ReportFormat format, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create report directory " + dir.string() + ": " + ec.message());
    if (format == ReportFormat::csv) {
        const auto path = dir / "report.csv";
        write_file_atomic(path, report_csv(record));
        return path;
    }
    std::ostringstream o;
    o << std::setprecision(17);
    o << "config_hash " << record.config_hash << "\n";
    o << "tool_version " << record.tool_version << "\n";
    o << "partial " << (record.partial ? 1 : 0) << "\n";
    o << "missing_seeds " << join_seeds(record.failed_seeds()) << "\n";
    for (const auto& s : record.seeds) {
        o << "\n[seed " << s.seed << "]\n";
        if (!s.ok) o << "error " << s.error << "\n";
        for (const auto& r : s.reports) o << to_text(r);
    }
    o << "\n[aggregate]\n";
    for (const Aggregate& a : record.aggregates())
        o << a.method << " seeds " << a.count << " ece " << a.ece_mean << " +- " << a.ece_sd << " signed_gap "
          << a.gap_mean << " +- " << a.gap_sd << " accuracy " << a.acc_mean << " +- " << a.acc_sd
          << (a.gap_mean < -0.01 ? " over_calibrated" : "") << "\n";
    const auto path = dir / "report.txt";
    write_file_atomic(path, o.str());
    return path;
}

namespace {

std::string reliability_csv(const RunRecord& record) {
    // Bins pooled over seeds: counts add, confidence and accuracy are count-weighted.
    auto seeds = ok_seeds(record);
    auto o = csv_stream();
    o << "method,bin,lo,hi,count,mean_confidence,accuracy\n";
    bool any = false;
    for (const std::string& m : record.methods()) {
        std::vector<Bin> pooled;
        std::vector<double> conf_sum, acc_sum;
        for (const SeedRecord* s : seeds) {
            const auto* r = find_report(*s, m);
            if (!r) continue;
            if (pooled.empty()) {
                pooled = r->bins;
                for (auto& b : pooled) b.count = 0;
                conf_sum.assign(pooled.size(), 0.0);
                acc_sum.assign(pooled.size(), 0.0);
            }
            for (std::size_t b = 0; b < r->bins.size() && b < pooled.size(); ++b) {
                pooled[b].count += r->bins[b].count;
                conf_sum[b] += r->bins[b].mean_confidence * static_cast<double>(r->bins[b].count);
                acc_sum[b] += r->bins[b].accuracy * static_cast<double>(r->bins[b].count);
            }
        }
        for (std::size_t b = 0; b < pooled.size(); ++b) {
            any = true;
            const double n = static_cast<double>(pooled[b].count);
            o << m << "," << b << "," << pooled[b].lo << "," << pooled[b].hi << "," << pooled[b].count << ","
              << (n > 0 ? conf_sum[b] / n : 0.0) << "," << (n > 0 ? acc_sum[b] / n : 0.0) << "\n";
        }
    }
    if (!any) missing("reliability");
    return o.str();
}

std::string series_csv(const RunRecord& record, bool svd) {
    const std::string name = svd ? "svd_sweep" : "explained_ratio";
    std::vector<double> fractions;
    if (svd) fractions = record.config.at("analysis").at("svd_fractions").get<std::vector<double>>();
    std::map<std::string, std::vector<std::vector<double>>> by_source;
    std::vector<std::string> order;
    for (const SeedRecord* s : ok_seeds(record))
        for (const auto& [src, vals] : svd ? s->svd : s->explained) {
            if (!by_source.count(src)) order.push_back(src);
            by_source[src].push_back(vals);
        }
    if (order.empty()) missing(name);
    auto o = csv_stream();
    o << (svd ? "source,fraction,accuracy_mean,accuracy_sd,drop_mean\n" : "source,k,ratio_mean,ratio_sd\n");
    for (const std::string& src : order) {
        const auto& rows = by_source[src];
        const std::size_t len = rows.front().size();
        for (std::size_t i = 0; i < len; ++i) {
            std::vector<double> col, drop;
            for (const auto& r : rows)
                if (i < r.size()) {
                    col.push_back(r[i]);
                    drop.push_back(r[0] - r[i]);
                }
            const Stat st = stat_of(col);
            if (svd)
                o << src << "," << (i < fractions.size() ? fractions[i] : 0.0) << "," << st.mean << "," << st.sd << ","
                  << mean_of(drop) << "\n";
            else
                o << src << "," << i + 1 << "," << st.mean << "," << st.sd << "\n";
        }
    }
    return o.str();
}

std::string logit_hist_csv(const RunRecord& record) {
    auto o = csv_stream();
    o << "model,seed,bin,lo,hi,count,mean,sd\n";
    bool any = false;
    for (const SeedRecord* s : ok_seeds(record)) {
        for (const auto& [name, st] : {std::pair{"full", &s->full_logits}, std::pair{"model", &s->model_logits}}) {
            if (!*st) continue;
            const LogitStats& ls = **st;
            for (std::size_t b = 0; b < ls.hist.counts.size(); ++b) {
                any = true;
                o << name << "," << s->seed << "," << b << "," << ls.hist.edges[b] << "," << ls.hist.edges[b + 1] << ","
                  << ls.hist.counts[b] << "," << ls.mean << "," << ls.sd << "\n";
            }
        }
    }
    if (!any) missing("max_logit_hist");
    return o.str();
}

std::string points_csv(const RunRecord& record, const std::string& which) {
    const auto seeds = ok_seeds(record);
    auto pick = [&](const SeedRecord& s) -> const std::vector<SweepPoint>& {
        return which == "r_sweep" ? s.r_sweep : which == "n_sweep" ? s.n_sweep : s.ipc_sweep;
    };
    if (seeds.empty() || pick(*seeds.front()).empty()) missing(which);
    const std::size_t len = pick(*seeds.front()).size();
    auto o = csv_stream();
    const char* x = which == "r_sweep" ? "r" : which == "n_sweep" ? "n" : "ipc";
    o << x << ",temperature_mean,ece_mean,ece_sd,signed_gap_mean,signed_gap_sd,accuracy_mean";
    if (which == "ipc_sweep") o << ",raw_ece_mean";
    o << "\n";
    for (std::size_t i = 0; i < len; ++i) {
        std::vector<double> t, e, g, a, raw;
        for (const SeedRecord* s : seeds) {
            const auto& pts = pick(*s);
            if (i >= pts.size()) continue;
            t.push_back(pts[i].temperature);
            e.push_back(pts[i].ece);
            g.push_back(pts[i].signed_gap);
            a.push_back(pts[i].accuracy);
            if (i < s->ipc_raw_ece.size()) raw.push_back(s->ipc_raw_ece[i]);
        }
        const Stat es = stat_of(e), gs = stat_of(g);
        o << pick(*seeds.front())[i].x << "," << mean_of(t) << "," << es.mean << "," << es.sd << "," << gs.mean << ","
          << gs.sd << "," << mean_of(a);
        if (which == "ipc_sweep") o << "," << (raw.empty() ? 0.0 : mean_of(raw));
        o << "\n";
    }
    return o.str();
}

// Minimal CSV reader for the SVG renderer: header + numeric/label cells.
std::vector<std::vector<std::string>> split_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ls(line);
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        rows.push_back(cells);
    }
    return rows;
}

std::string svg_escape(const std::string& s) {
    std::string o;
    for (char c : s) {
        if (c == '<') o += "&lt;";
        else if (c == '>') o += "&gt;";
        else if (c == '&') o += "&amp;";
        else o += c;
    }
    return o;
}

/// Line chart of column `ycol` against `xcol`, one series per value of `series` (or one series if -1).
std::string line_svg(const std::string& title, const std::string& csv, int xcol, int ycol, int series) {
    const auto rows = split_csv(csv);
    std::map<std::string, std::vector<std::pair<double, double>>> lines;
    std::vector<std::string> order;
    double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const std::string key = series >= 0 ? r[static_cast<std::size_t>(series)] : "";
        const double x = std::stod(r[static_cast<std::size_t>(xcol)]);
        const double y = std::stod(r[static_cast<std::size_t>(ycol)]);
        if (!lines.count(key)) order.push_back(key);
        lines[key].emplace_back(x, y);
        xmin = std::min(xmin, x);
        xmax = std::max(xmax, x);
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
    }
    if (!(xmax > xmin)) xmax = xmin + 1.0;
    if (!(ymax > ymin)) ymax = ymin + 1.0;
    const double W = 480, H = 320, L = 60, R = 20, T = 30, B = 40;
    auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::ostringstream o;
    o << std::setprecision(6);
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << svg_escape(title)
      << "</text>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
      << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    o << "<text x=\"" << L << "\" y=\"" << H - B + 15 << "\" font-size=\"10\">" << xmin << "</text>\n";
    o << "<text x=\"" << W - R << "\" y=\"" << H - B + 15 << "\" font-size=\"10\" text-anchor=\"end\">" << xmax
      << "</text>\n";
    o << "<text x=\"" << L - 4 << "\" y=\"" << H - B << "\" font-size=\"10\" text-anchor=\"end\">" << ymin
      << "</text>\n";
    o << "<text x=\"" << L - 4 << "\" y=\"" << T + 8 << "\" font-size=\"10\" text-anchor=\"end\">" << ymax
      << "</text>\n";
    for (std::size_t k = 0; k < order.size(); ++k) {
        const char* col = colors[k % 6];
        o << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : lines[order[k]]) o << px(x) << "," << py(y) << " ";
        o << "\"/>\n";
        if (!order[k].empty())
            o << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 12 * (k + 1) << "\" font-size=\"10\" fill=\"" << col
              << "\" text-anchor=\"end\">" << svg_escape(order[k]) << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

std::string curve_svg(const std::string& which, const std::string& csv) {
    if (which == "reliability") return line_svg("reliability: accuracy per confidence bin", csv, 5, 6, 0);
    if (which == "svd_sweep") return line_svg("accuracy vs dropped singular values", csv, 1, 2, 0);
    if (which == "explained_ratio") return line_svg("explained ratio", csv, 1, 2, 0);
    if (which == "max_logit_hist") return line_svg("max-logit histogram", csv, 3, 5, 0);
    if (which == "r_sweep") return line_svg("ECE vs mask ratio r", csv, 0, 2, -1);
    if (which == "n_sweep") return line_svg("ECE vs validation fraction", csv, 0, 2, -1);
    return line_svg("ECE vs IPC", csv, 0, 2, -1);
}

}  // namespace

std::string curve_csv(const RunRecord& record, const std::string& which) {
    if (which == "reliability") return reliability_csv(record);
    if (which == "svd_sweep") return series_csv(record, true);
    if (which == "explained_ratio") return series_csv(record, false);
    if (which == "max_logit_hist") return logit_hist_csv(record);
    if (which == "r_sweep" || which == "n_sweep" || which == "ipc_sweep") return points_csv(record, which);
    throw UsageError("unknown curve '" + which + "'");
}

std::vector<std::filesystem::path> emit_curves(const RunRecord& record, const std::vector<std::string>& which,
                                               const std::filesystem::path& dir, bool svg) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create curve directory " + dir.string() + ": " + ec.message());
    std::vector<std::filesystem::path> out;
    for (const std::string& w : which) {
        const std::string csv = curve_csv(record, w);
        out.push_back(dir / (w + ".csv"));
        write_file_atomic(out.back(), csv);
        if (svg) {
            out.push_back(dir / (w + ".svg"));
            write_file_atomic(out.back(), curve_svg(w, csv));
        }
    }
    return out;
}

}  // namespace ddcal
