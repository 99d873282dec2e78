import json
import os
from typing import Any, Dict

import numpy as np
from loguru import logger

from ttstar.services.geometry import SurfaceMesh
from ttstar.services.painleve3 import PIIITrace


class ExportService:
    """
    Service writing meshes, traces and reports to disk.
    """

    def __init__(self):
        logger.info("Export service initialized")

    @staticmethod
    def _prepare(path: str) -> None:
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)

    def write_obj(self, mesh: SurfaceMesh, path: str) -> str:
        """
        Write the mesh as Wavefront OBJ.

        Only sampled vertices are written, so OBJ indices are renumbered
        in grid order; faces never touch a singular vertex.

        Args:
            mesh: Surface mesh
            path: Output file path

        Returns:
            The path written
        """
        try:
            self._prepare(path)
            renumber: Dict[int, int] = {}
            with open(path, "w") as f:
                f.write(f"# ttstar surface a={mesh.a!r} nr={mesh.grid.nr} ntheta={mesh.grid.ntheta}\n")
                for index, sample in enumerate(mesh.vertices):
                    if sample is None:
                        continue
                    renumber[index] = len(renumber) + 1
                    x1, x2, x3 = sample.point
                    f.write(f"v {x1:.17g} {x2:.17g} {x3:.17g}\n")
                for quad in mesh.faces:
                    f.write("f " + " ".join(str(renumber[i]) for i in quad) + "\n")
            logger.info(f"Wrote {len(renumber)} vertices and {len(mesh.faces)} faces to {path}")
            return path
        except Exception as e:
            logger.error(f"Error writing mesh to {path}: {str(e)}")
            raise

    def write_annotations(self, mesh: SurfaceMesh, path: str) -> str:
        """Per-vertex sidecar keyed by grid index."""
        return self.write_json({"a": mesh.a, "vertices": mesh.annotations()}, path)

    def write_trace_csv(self, trace: PIIITrace, path: str) -> str:
        """Columns x, v, vp, y at full double precision."""
        try:
            self._prepare(path)
            table = np.column_stack([trace.nodes, trace.y])
            np.savetxt(path, table, delimiter=",", fmt="%.17g", header="x,v,vp,y", comments="")
            logger.info(f"Wrote {table.shape[0]} trace rows to {path}")
            return path
        except Exception as e:
            logger.error(f"Error writing trace to {path}: {str(e)}")
            raise

    def write_json(self, payload: Any, path: str) -> str:
        try:
            self._prepare(path)
            with open(path, "w") as f:
                json.dump(payload, f, indent=2)
            logger.info(f"Wrote {path}")
            return path
        except Exception as e:
            logger.error(f"Error writing {path}: {str(e)}")
            raise
