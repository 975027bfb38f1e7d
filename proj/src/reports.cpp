#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "pmdg/harness.hpp"
#include "pmdg/image_io.hpp"

namespace fs = std::filesystem;

namespace pmdg {

namespace {

// -- tiny raster helpers for the optional chart images ----------------------

Tensor make_canvas(int h, int w) { return Tensor::full({3, h, w}, 1.0); }

void fill_rect(Tensor& img, int y0, int x0, int y1, int x1, double r, double g, double b) {
    y0 = std::clamp(y0, 0, img.dim(1));
    y1 = std::clamp(y1, 0, img.dim(1));
    x0 = std::clamp(x0, 0, img.dim(2));
    x1 = std::clamp(x1, 0, img.dim(2));
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            img.at(0, y, x) = r;
            img.at(1, y, x) = g;
            img.at(2, y, x) = b;
        }
    }
}

void draw_line(Tensor& img, double y0, double x0, double y1, double x1, double r, double g, double b) {
    int steps = static_cast<int>(std::max(std::abs(y1 - y0), std::abs(x1 - x0))) + 1;
    for (int i = 0; i <= steps; ++i) {
        double t = static_cast<double>(i) / steps;
        int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
        int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
        fill_rect(img, y, x, y + 1, x + 1, r, g, b);
    }
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write report file: " + path);
    f << content;
}

// row identity for the table report
struct TableRow {
    std::string algorithm;
    std::string signature;
    std::string mode;
    std::string label() const {
        std::string l = algorithm;
        l += " / " + (mode == "mdg" ? std::string("mdg") : signature);
        return l;
    }
    bool operator<(const TableRow& o) const {
        return std::tie(algorithm, signature, mode) < std::tie(o.algorithm, o.signature, o.mode);
    }
};

std::vector<std::string> sorted_targets(const std::vector<RunRecord>& records) {
    std::set<std::string> t;
    for (const auto& r : records) {
        for (const auto& [k, v] : r.target_accuracy) t.insert(k);
    }
    return {t.begin(), t.end()};
}

std::vector<std::string> render_table(const std::vector<RunRecord>& records,
                                      const std::string& out_dir) {
    if (records.empty()) throw ValidationError("table report: no records");
    auto targets = sorted_targets(records);

    std::map<TableRow, std::map<std::string, std::vector<double>>> cells;  // row -> col -> accs
    for (const auto& r : records) {
        TableRow row{r.resolved_config.value("algorithm", "?"),
                     transform_signature(r.transforms_used), r.resolved_config.value("mode", "pmdg")};
        for (const auto& [target, acc] : r.target_accuracy) cells[row][target].push_back(acc);
        cells[row]["avg"].push_back(r.mean_target_accuracy());
    }
    std::vector<std::string> cols = targets;
    cols.push_back("avg");

    // aggregate all cells, find best / second-best mean per column
    std::map<TableRow, std::map<std::string, AggregateCell>> agg;
    std::map<std::string, std::vector<double>> col_means;
    for (const auto& [row, colmap] : cells) {
        for (const auto& [col, accs] : colmap) {
            agg[row][col] = aggregate(accs);
            col_means[col].push_back(agg[row][col].mean_pct);
        }
    }
    auto rank_of = [&](const std::string& col, double mean) {
        int higher = 0;
        for (double m : col_means[col]) {
            if (m > mean) ++higher;
        }
        return higher;  // 0 = best, 1 = second best
    };

    std::ostringstream csv, md;
    csv << "row";
    md << "| row |";
    for (const auto& c : cols) {
        csv << "," << csv_escape(c + " mean") << "," << csv_escape(c + " stderr");
        md << " " << c << " |";
    }
    csv << "\n";
    md << "\n|---|";
    for (std::size_t i = 0; i < cols.size(); ++i) md << "---|";
    md << "\n";

    for (const auto& [row, colmap] : agg) {
        csv << csv_escape(row.label());
        md << "| " << row.label() << " |";
        for (const auto& c : cols) {
            auto it = colmap.find(c);
            if (it == colmap.end()) {
                csv << ",,";
                md << "  |";
                continue;
            }
            const AggregateCell& cell = it->second;
            char mbuf[64];
            std::snprintf(mbuf, sizeof(mbuf), "%.4f,%.4f", cell.mean_pct, cell.stderr_pct);
            csv << "," << mbuf;
            int rank = rank_of(c, cell.mean_pct);
            std::string text = cell.formatted;
            if (rank == 0) text = "**" + text + "**";
            else if (rank == 1) text = "_" + text + "_";
            if (cell.single_trial) text += " (1 trial)";
            md << " " << text << " |";
        }
        csv << "\n";
        md << "\n";
    }

    fs::create_directories(out_dir);
    std::string csv_path = (fs::path(out_dir) / "table.csv").string();
    std::string md_path = (fs::path(out_dir) / "table.md").string();
    write_text(csv_path, csv.str());
    write_text(md_path, md.str());
    return {csv_path, md_path};
}

std::vector<std::string> render_gains(const std::vector<RunRecord>& records,
                                      const std::string& out_dir) {
    std::vector<RunRecord> baseline, methods;
    for (const auto& r : records) {
        if (r.resolved_config.value("algorithm", "") == "erm" &&
            transform_signature(r.transforms_used) == "org") {
            baseline.push_back(r);
        } else {
            methods.push_back(r);
        }
    }
    if (baseline.empty()) {
        throw ValidationError("gains report: records contain no ERM [org] baseline runs");
    }
    if (methods.empty()) throw ValidationError("gains report: no method records");
    GainMatrix m = gain_matrix(methods, baseline);

    std::ostringstream csv, md;
    csv << "transforms";
    md << "| transforms |";
    for (const auto& c : m.col_keys) {
        csv << "," << csv_escape(c);
        md << " " << c << " |";
    }
    csv << "\n";
    md << "\n|---|";
    for (std::size_t i = 0; i < m.col_keys.size(); ++i) md << "---|";
    md << "\n";
    for (std::size_t ri = 0; ri < m.row_keys.size(); ++ri) {
        csv << csv_escape(m.row_keys[ri]);
        md << "| " << m.row_keys[ri] << " |";
        for (std::size_t ci = 0; ci < m.col_keys.size(); ++ci) {
            double g = m.gains[ri][ci];
            if (std::isnan(g)) {
                csv << ",";
                md << "  |";
            } else {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%+.1f", g);
                csv << "," << buf;
                md << " " << buf << " |";
            }
        }
        csv << "\n";
        md << "\n";
    }

    // heatmap: green gains, red losses
    int cell = 24;
    Tensor img = make_canvas(static_cast<int>(m.row_keys.size()) * cell,
                             static_cast<int>(m.col_keys.size()) * cell);
    double peak = 1e-9;
    for (const auto& row : m.gains) {
        for (double g : row) {
            if (!std::isnan(g)) peak = std::max(peak, std::abs(g));
        }
    }
    for (std::size_t ri = 0; ri < m.row_keys.size(); ++ri) {
        for (std::size_t ci = 0; ci < m.col_keys.size(); ++ci) {
            double g = m.gains[ri][ci];
            if (std::isnan(g)) continue;
            double t = std::clamp(std::abs(g) / peak, 0.0, 1.0);
            double r = g >= 0 ? 1.0 - t : 1.0;
            double gr = g >= 0 ? 1.0 : 1.0 - t;
            fill_rect(img, static_cast<int>(ri) * cell + 1, static_cast<int>(ci) * cell + 1,
                      static_cast<int>(ri + 1) * cell - 1, static_cast<int>(ci + 1) * cell - 1, r, gr,
                      1.0 - t);
        }
    }

    fs::create_directories(out_dir);
    std::string csv_path = (fs::path(out_dir) / "gains.csv").string();
    std::string md_path = (fs::path(out_dir) / "gains.md").string();
    std::string png_path = (fs::path(out_dir) / "gains.png").string();
    write_text(csv_path, csv.str());
    write_text(md_path, md.str());
    write_png(png_path, img);
    return {csv_path, md_path, png_path};
}

std::vector<std::string> render_equal_data(const std::vector<RunRecord>& records,
                                           const std::string& out_dir) {
    if (records.empty()) throw ValidationError("equal_data report: no records");
    // series keyed by (mode, n)
    struct Key {
        std::string mode;
        int n;
        bool operator<(const Key& o) const { return std::tie(mode, n) < std::tie(o.mode, o.n); }
    };
    std::map<Key, std::vector<double>> series;
    for (const auto& r : records) {
        int n = 0;
        for (const auto& [d, c] : r.sample_counts) n += c;
        series[{r.resolved_config.value("mode", "pmdg"), n}].push_back(r.mean_target_accuracy());
    }

    std::ostringstream csv, md;
    csv << "arm,n,mean,stderr,trials\n";
    md << "| arm | n | accuracy |\n|---|---|---|\n";
    std::set<int> ns;
    std::map<std::string, std::map<int, AggregateCell>> by_arm;
    for (const auto& [key, accs] : series) {
        AggregateCell cell = aggregate(accs);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%s,%d,%.4f,%.4f,%d\n", key.mode.c_str(), key.n, cell.mean_pct,
                      cell.stderr_pct, cell.trials);
        csv << buf;
        md << "| " << key.mode << " | " << key.n << " | " << cell.formatted << " |\n";
        ns.insert(key.n);
        by_arm[key.mode][key.n] = cell;
    }

    // line chart, one polyline per arm (mdg blue, pmdg orange), stderr whiskers
    int h = 240, w = 320, margin = 20;
    Tensor img = make_canvas(h, w);
    double lo = 100.0, hi = 0.0;
    for (const auto& [arm, pts] : by_arm) {
        for (const auto& [n, cell] : pts) {
            lo = std::min(lo, cell.mean_pct - cell.stderr_pct);
            hi = std::max(hi, cell.mean_pct + cell.stderr_pct);
        }
    }
    if (hi <= lo) hi = lo + 1.0;
    int nmin = *ns.begin(), nmax = *ns.rbegin();
    auto px = [&](int n) {
        return nmax > nmin ? margin + (w - 2 * margin) * (n - nmin) / static_cast<double>(nmax - nmin)
                           : w / 2.0;
    };
    auto py = [&](double acc) { return h - margin - (h - 2.0 * margin) * (acc - lo) / (hi - lo); };
    draw_line(img, h - margin, margin, h - margin, w - margin, 0, 0, 0);
    draw_line(img, margin, margin, h - margin, margin, 0, 0, 0);
    for (const auto& [arm, pts] : by_arm) {
        double r = arm == "mdg" ? 0.12 : 1.0, g = arm == "mdg" ? 0.38 : 0.55, b = arm == "mdg" ? 0.95 : 0.1;
        double prev_x = -1, prev_y = -1;
        for (const auto& [n, cell] : pts) {
            double x = px(n), y = py(cell.mean_pct);
            draw_line(img, py(cell.mean_pct - cell.stderr_pct), x, py(cell.mean_pct + cell.stderr_pct),
                      x, r, g, b);
            fill_rect(img, static_cast<int>(y) - 2, static_cast<int>(x) - 2, static_cast<int>(y) + 3,
                      static_cast<int>(x) + 3, r, g, b);
            if (prev_x >= 0) draw_line(img, prev_y, prev_x, y, x, r, g, b);
            prev_x = x;
            prev_y = y;
        }
    }

    fs::create_directories(out_dir);
    std::string csv_path = (fs::path(out_dir) / "equal_data.csv").string();
    std::string md_path = (fs::path(out_dir) / "equal_data.md").string();
    std::string png_path = (fs::path(out_dir) / "equal_data.png").string();
    write_text(csv_path, csv.str());
    write_text(md_path, md.str());
    write_png(png_path, img);
    return {csv_path, md_path, png_path};
}

std::vector<std::string> render_correlation(const std::vector<RunRecord>& records,
                                            const std::string& out_dir) {
    std::map<std::string, std::vector<double>> mdg, pmdg;
    for (const auto& r : records) {
        std::string alg = r.resolved_config.value("algorithm", "?");
        if (r.resolved_config.value("mode", "") == "mdg") {
            mdg[alg].push_back(r.mean_target_accuracy());
        } else {
            pmdg[alg].push_back(r.mean_target_accuracy());
        }
    }
    std::map<std::string, double> mdg_mean, pmdg_mean;
    for (const auto& [k, v] : mdg) mdg_mean[k] = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    for (const auto& [k, v] : pmdg) pmdg_mean[k] = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    CorrelationReport rep = correlation_report(mdg_mean, pmdg_mean);

    std::ostringstream csv, md;
    csv << "algorithm,mdg_accuracy,pmdg_accuracy\n";
    for (std::size_t i = 0; i < rep.keys.size(); ++i) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%s,%.4f,%.4f\n", rep.keys[i].c_str(), rep.points[i].first,
                      rep.points[i].second);
        csv << buf;
    }
    char cbuf[128];
    std::snprintf(cbuf, sizeof(cbuf), "pearson = %.4f, spearman = %.4f", rep.pearson, rep.spearman);
    md << "# MDG vs PMDG accuracy\n\n" << cbuf << "\n\n| algorithm | mdg | pmdg |\n|---|---|---|\n";
    for (std::size_t i = 0; i < rep.keys.size(); ++i) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "| %s | %.4f | %.4f |\n", rep.keys[i].c_str(),
                      rep.points[i].first, rep.points[i].second);
        md << buf;
    }

    // scatter with identity diagonal
    int size = 256, margin = 20;
    Tensor img = make_canvas(size, size);
    double lo = 1.0, hi = 0.0;
    for (const auto& [x, y] : rep.points) {
        lo = std::min({lo, x, y});
        hi = std::max({hi, x, y});
    }
    if (hi <= lo) hi = lo + 0.01;
    auto pos = [&](double v) {
        return margin + (size - 2.0 * margin) * (v - lo) / (hi - lo);
    };
    draw_line(img, size - margin, margin, margin, size - margin, 0.7, 0.7, 0.7);  // diagonal
    for (const auto& [x, y] : rep.points) {
        int cx = static_cast<int>(pos(x));
        int cy = static_cast<int>(size - pos(y));
        fill_rect(img, cy - 2, cx - 2, cy + 3, cx + 3, 0.85, 0.25, 0.1);
    }

    fs::create_directories(out_dir);
    std::string csv_path = (fs::path(out_dir) / "correlation.csv").string();
    std::string md_path = (fs::path(out_dir) / "correlation.md").string();
    std::string png_path = (fs::path(out_dir) / "correlation.png").string();
    write_text(csv_path, csv.str());
    write_text(md_path, md.str());
    write_png(png_path, img);
    return {csv_path, md_path, png_path};
}

}  // namespace

std::vector<std::string> render_report(ReportKind kind, const std::vector<RunRecord>& records,
                                       const std::string& out_dir) {
    switch (kind) {
        case ReportKind::table: return render_table(records, out_dir);
        case ReportKind::gains: return render_gains(records, out_dir);
        case ReportKind::equal_data: return render_equal_data(records, out_dir);
        case ReportKind::correlation: return render_correlation(records, out_dir);
    }
    throw ValidationError("unknown report kind");
}

}  // namespace pmdg
