from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    feas: float = 1e-9
    dual: float = 1e-7
    gauge: float = 1e-6
    rank: float = 1e-10

    def as_dict(self):
        return {"tol_feas": self.feas, "tol_dual": self.dual,
                "tol_gauge": self.gauge, "tol_rank": self.rank}


DEFAULT_TOL = Tolerances()
