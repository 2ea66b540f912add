"""Sandbox runner package."""

from .runner import SandboxRequest, SandboxResponse, main, run_sandbox
