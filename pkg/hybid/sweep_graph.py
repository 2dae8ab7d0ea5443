from typing import List, Literal

from langgraph.graph import END, START, StateGraph
from langgraph.types import Send

from hybid.evalreport import check_gammas, sweep_row
from hybid.instance import TECHNOLOGY_CONFIGURATIONS, with_technologies
from hybid.main.config import get_config, make_backend, solve_options
from hybid.schemas import AblationState, GammaTask, SweepReport, SweepState


def route_gammas(state: SweepState) -> List[Send] | Literal["assemble_report"]:
    gammas = check_gammas(state["instance"], state.get("gammas") or [])
    if not gammas:
        return "assemble_report"
    return [
        Send(
            "solve_gamma",
            {
                "instance": state["instance"],
                "gamma": gamma,
                "directions": state.get("directions") or [],
            },
        )
        for gamma in gammas
    ]


# One Send per budget so the solves run in parallel
def solve_gamma(state: GammaTask, config):
    row = sweep_row(
        state["instance"],
        state["gamma"],
        state["directions"],
        options=solve_options(config),
        backend=make_backend(config),
        duality_tol=get_config(config)["duality_tol"],
    )
    return {"rows": [row]}


def assemble_report(state: SweepState):
    report = SweepReport(
        rows=list(state.get("rows") or []),
        configuration=state.get("configuration") or "PV+EL+BAT",
    )
    return {"report": report}


sweep_graph = StateGraph(SweepState)
sweep_graph.add_node(solve_gamma)
sweep_graph.add_node(assemble_report)
sweep_graph.add_conditional_edges(START, route_gammas, ["solve_gamma", "assemble_report"])
sweep_graph.add_edge("solve_gamma", "assemble_report")
sweep_graph.add_edge("assemble_report", END)
sweep_graph = sweep_graph.compile()


def route_configurations(state: AblationState) -> List[Send]:
    return [
        Send(
            "sweep_configuration",
            {
                "instance": with_technologies(state["instance"], battery, electrolyzer),
                "gammas": state["gammas"],
                "directions": state.get("directions") or [],
                "configuration": name,
            },
        )
        for name, (battery, electrolyzer) in TECHNOLOGY_CONFIGURATIONS.items()
    ]


def sweep_configuration(state: SweepState, config):
    output = sweep_graph.invoke(state, config)
    return {"reports": {state["configuration"]: output["report"]}}


ablation_graph = StateGraph(AblationState)
ablation_graph.add_node(sweep_configuration)
ablation_graph.add_conditional_edges(START, route_configurations, ["sweep_configuration"])
ablation_graph.add_edge("sweep_configuration", END)
ablation_graph = ablation_graph.compile()
