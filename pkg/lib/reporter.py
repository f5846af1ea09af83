"""Plain-text tables and the HTML uplift report."""
import os

import pandas as pd
import plotly.graph_objects as go

from lib.metrics import task_mean

# --- Configuration ---
REPORT_TITLE = "Critic uplift per task"
METHOD_COLORS = {"baseline": "#004b57", "treated": "#00a0b2"}


def _float_format(value):
    return f"{value:.4f}"


def summary_frame(summary):
    """One row per task: runs, mean reward under the summary's metric, interventions, revisions."""
    rows = [
        {
            "task_id": task_id,
            "runs": len(summary.rewards[task_id]),
            summary.metric: float(task_mean(summary, task_id)),
            "interventions": sum(summary.interventions[task_id]),
            "revisions": sum(summary.revisions[task_id]),
        }
        for task_id in sorted(summary.rewards)
    ]
    return pd.DataFrame(rows).set_index("task_id")


def format_summary(summary):
    aggregate = summary.aggregate
    lines = [
        f"Method: {summary.method}",
        summary_frame(summary).to_string(float_format=_float_format),
        "-" * 40,
        f"{summary.metric}: {float(aggregate):.4f} ({aggregate}) over {summary.episodes} episodes",
        f"Interventions: {summary.total_interventions}  Revisions: {summary.total_revisions}  "
        f"Aborted: {summary.aborted}",
    ]
    return "\n".join(lines)


def uplift_frame(report):
    rows = [task.model_dump() for task in report.tasks]
    df = pd.DataFrame(rows).set_index("task_id")
    return df.rename(columns={"baseline": report.baseline.method, "treated": report.treated.method})


def format_uplift_report(report):
    lines = [
        f"Metric: {report.metric}",
        uplift_frame(report).to_string(float_format=_float_format),
        "-" * 40,
        f"{report.baseline.method}: {report.baseline.aggregate:.4f} ({report.baseline.aggregate_exact})  "
        f"interventions {report.baseline.interventions}, revisions {report.baseline.revisions}",
        f"{report.treated.method}: {report.treated.aggregate:.4f} ({report.treated.aggregate_exact})  "
        f"interventions {report.treated.interventions}, revisions {report.treated.revisions}",
        f"Delta: {report.delta:+.4f} ({report.delta_exact})",
    ]
    return "\n".join(lines)


def format_stats(stats):
    rows = [{"domain": domain, **counts.model_dump()} for domain, counts in stats.per_domain.items()]
    lines = [
        f"Trajectories: {stats.n_trajectories}  Samples: {stats.n_samples}  "
        f"Positive: {stats.n_positive}  Negative: {stats.n_negative}",
    ]
    if rows:
        lines.append(pd.DataFrame(rows).set_index("domain").to_string())
    return "\n".join(lines)


def create_chart(report):
    """Grouped bar chart of per-task means for both methods."""
    task_ids = [task.task_id for task in report.tasks]
    fig = go.Figure()
    for side, method in (("baseline", report.baseline.method), ("treated", report.treated.method)):
        fig.add_trace(go.Bar(
            x=task_ids,
            y=[getattr(task, side) for task in report.tasks],
            name=method,
            marker_color=METHOD_COLORS[side],
            hovertemplate=f'<b>{method}</b><br>Task: %{{x}}<br>{report.metric}: %{{y:.3f}}<extra></extra>',
        ))
    fig.update_layout(
        width=1080,
        height=600,
        barmode='group',
        xaxis_title="Task",
        yaxis_title=report.metric,
        legend_title="Method",
        template="plotly_white",
        legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="left", x=0),
    )
    return fig.to_html(full_html=False, include_plotlyjs='cdn')


def generate_html_report(report, output_path, report_title=REPORT_TITLE):
    """Writes the uplift chart and per-task table as one HTML file."""
    df_display = uplift_frame(report)
    for col in df_display.columns:
        if df_display[col].dtype.kind == "f":
            df_display[col] = df_display[col].apply(_float_format)
    table_html = df_display.to_html(classes='styled-table')

    summary_html = f"""
    <div class="summary-stats">
        <h3>{report.metric}</h3>
        <p>{report.baseline.method}: {report.baseline.aggregate:.4f} ({report.baseline.interventions:,} interventions)</p>
        <p>{report.treated.method}: {report.treated.aggregate:.4f} ({report.treated.interventions:,} interventions)</p>
        <p>Delta: {report.delta:+.4f}</p>
    </div>
    """

    html_template = f"""
<html>
<head>
    <title>{report_title}</title>
</head>
<body>
    <h1>{report_title}</h1>
    {summary_html}
    {create_chart(report)}
    {table_html}
</body>
</html>
"""

    output_dir = os.path.dirname(output_path)
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)

    with open(output_path, "w", encoding="utf-8") as f:
        f.write(html_template)
