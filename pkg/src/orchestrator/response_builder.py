"""
Response builder for pipeline stage results and their one-line summaries.
"""

from typing import Any, Dict, Optional


class ResponseBuilder:
    """Builds standardized stage results."""

    @staticmethod
    def build_stage_response(
        stage: str,
        summary: str,
        outputs: Optional[Dict[str, str]] = None,
        data: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """
        Build the result of a successful stage.

        Args:
            stage: Subcommand name
            summary: Human readable result, one line
            outputs: Written artifacts by role
            data: Numbers worth keeping (accuracy, success rates, ...)

        Returns:
            Result dictionary
        """
        response = {
            "success": True,
            "stage": stage,
            "summary": summary,
        }

        if outputs:
            response["outputs"] = outputs

        if data is not None:
            response["data"] = data

        return response

    @staticmethod
    def add_metadata(
        response: Dict[str, Any],
        execution_time: float,
        additional_metadata: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        metadata = {"execution_time": round(execution_time, 2)}
        if additional_metadata:
            metadata.update(additional_metadata)
        response["metadata"] = metadata
        return response

    @staticmethod
    def format_summary(response: Dict[str, Any]) -> str:
        """The single line printed by the CLI on success."""
        line = f"{response['stage']}: {response['summary']}"
        elapsed = response.get("metadata", {}).get("execution_time")
        if elapsed is not None:
            line += f" [{elapsed:.2f}s]"
        return line


# Global response builder instance
response_builder = ResponseBuilder()
