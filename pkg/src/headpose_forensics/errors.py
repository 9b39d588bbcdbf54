"""Exception hierarchy shared by the library and the CLI.

Each class carries an ``exit_code`` so the command-line front end can map
failures to distinct process exit statuses.
"""


class HeadPoseError(Exception):
    exit_code = 1


class InvalidInputError(HeadPoseError, ValueError):
    exit_code = 4


class ParseError(InvalidInputError):
    """Malformed model, landmark, manifest, pose, or feature file."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class ProjectionSingularityError(HeadPoseError, ArithmeticError):
    exit_code = 7


class InsufficientPointsError(InvalidInputError):
    pass


class NumericalFailureError(HeadPoseError, ArithmeticError):
    """Raised when the pose refinement produces non-finite residuals."""

    exit_code = 7

    def __init__(self, message, last_pose=None):
        super().__init__(message)
        self.last_pose = last_pose


class DegenerateTrainingError(HeadPoseError, ValueError):
    exit_code = 6


class ModelIncompleteError(HeadPoseError, ValueError):
    exit_code = 6


class UndefinedMetricError(HeadPoseError, ValueError):
    exit_code = 4


class SplitInfeasibleError(HeadPoseError, ValueError):
    exit_code = 5


class SpecInvalidError(InvalidInputError):
    pass


class IllConditionedWarning(UserWarning):
    """The linear pose initialisation is rank deficient or nearly so."""
